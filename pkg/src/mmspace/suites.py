"""Seeded test-function suites shared by the CLI and the test-suite."""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .space import FiniteMetricMeasureSpace

__all__ = ["piecewise_suite", "smooth_suite", "spiky_suite", "log_exemplar", "mean_zero"]


def piecewise_suite(space: FiniteMetricMeasureSpace, count: int, seed: int = 0, pieces: int = 8) -> list[np.ndarray]:
    """Piecewise-constant functions on the metric Voronoi cells of random sites."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        sites = rng.choice(space.n, size=min(pieces, space.n), replace=False)
        cell = space.rows(sites).argmin(axis=0)
        out.append(rng.normal(size=sites.size)[cell])
    return out


def smooth_suite(coords: np.ndarray, count: int, seed: int = 0, bumps: int = 4) -> list[np.ndarray]:
    """Sums of Gaussian bumps defined on coordinates, so they can be resampled on finer grids."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    rng = np.random.default_rng(seed)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    out = []
    for _ in range(count):
        f = np.zeros(len(coords))
        for _ in range(bumps):
            c = rng.uniform(lo, hi)
            w = rng.uniform(0.1, 0.5) * float(np.max(hi - lo))
            f += rng.normal() * np.exp(-np.sum((coords - c) ** 2, axis=1) / (2 * w * w))
        out.append(f)
    return out


def spiky_suite(space: FiniteMetricMeasureSpace, count: int, seed: int = 0, spikes: int = 3, height: float = 50.0) -> list[np.ndarray]:
    """Gaussian noise plus a few tall spikes, so that maximal-function level sets are nontrivial."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        f = rng.normal(size=space.n)
        idx = rng.choice(space.n, size=min(spikes, space.n), replace=False)
        f[idx] += height * rng.exponential(size=idx.size) / np.sqrt(space.mass[idx] / space.mass.mean())
        out.append(f)
    return out


def log_exemplar(space: FiniteMetricMeasureSpace, x0: int) -> np.ndarray:
    """``log(1/rho(x, x0))``, capped at the point ``x0`` by its value at the nearest neighbour."""
    d = space.row(x0).copy()
    pos = d[d > 0]
    if pos.size == 0:
        raise InputError("space has a single point")
    d[x0] = pos.min()
    return -np.log(d)


def mean_zero(space: FiniteMetricMeasureSpace, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return f - float(np.sum(f * space.mass)) / space.total_mass

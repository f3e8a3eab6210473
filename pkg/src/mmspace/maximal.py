"""Dyadic maximal function, the relative distributional inequality and the sharp-maximal ratio."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bmo import BallFamily, ball_family, sharp_function
from .cubes import DyadicCubeTree
from .errors import ConfigurationError, InputError
from .isoperimetry import MetricBall, covering_sigma
from .space import FiniteMetricMeasureSpace, estimate_doubling

__all__ = [
    "resolution_level",
    "dyadic_maximal",
    "weak_type_constant",
    "RdiParams",
    "rdi_params",
    "RdiReport",
    "rdi_check",
    "FSReport",
    "fefferman_stein_check",
]


def resolution_level(tree: DyadicCubeTree, resolution: int) -> int:
    """Tree level of the given resolution; levels are absolute exponents, so the two coincide."""
    if resolution not in tree.levels:
        raise InputError(f"tree has no level {resolution}")
    return resolution


def _levels_from(tree: DyadicCubeTree, min_resolution: int) -> list[int]:
    levels = [k for k in tree.levels if k >= min_resolution]
    if not levels:
        raise InputError(f"tree has no level >= {min_resolution}")
    return levels


def dyadic_maximal(space: FiniteMetricMeasureSpace, tree: DyadicCubeTree, f, min_resolution: int = 2) -> np.ndarray:
    """``sup_Q mu(Q)^{-1} int_Q |f|`` over cubes of resolution ``>= min_resolution`` containing ``x``."""
    af = np.abs(np.asarray(f, dtype=float)) * space.mass
    out = np.zeros(space.n)
    for k in _levels_from(tree, min_resolution):
        lab = tree.labels[tree.index(k)]
        num = np.bincount(lab, weights=af, minlength=tree.n_cubes(k))
        den = np.bincount(lab, weights=space.mass, minlength=tree.n_cubes(k))
        np.maximum(out, (num / den)[lab], out=out)
    return out


def _weak_ratio(space, Mf: np.ndarray, l1: float) -> float:
    """``sup_alpha alpha mu(Mf > alpha) / ||f||_1``, the sup taken as alpha increases to each value."""
    order = np.argsort(-Mf, kind="stable")
    v = Mf[order]
    cum = np.cumsum(space.mass[order])
    # all points with value >= v[i] lie in the level set just below v[i]
    last = np.flatnonzero(np.append(v[1:] != v[:-1], True))
    return float(np.max(v[last] * cum[last]) / l1)


def weak_type_constant(
    space: FiniteMetricMeasureSpace, tree: DyadicCubeTree, functions=(), min_resolution: int = 2, n_points: int = 256
) -> float:
    """Measured weak (1,1) constant of the dyadic maximal operator.

    Tested on up to ``n_points`` evenly spaced point indicators (whose level
    sets are exactly their ancestor cubes) and on any extra ``functions``.
    """
    _levels_from(tree, min_resolution)
    best = 0.0
    for x in np.unique(np.linspace(0, space.n - 1, min(n_points, space.n)).round().astype(np.int64)):
        f = np.zeros(space.n)
        f[x] = 1.0
        Mf = dyadic_maximal(space, tree, f, min_resolution)
        best = max(best, _weak_ratio(space, Mf, float(space.mass[x])))
    for f in functions:
        f = np.asarray(f, dtype=float)
        l1 = float(np.sum(np.abs(f) * space.mass))
        if l1 > 0:
            best = max(best, _weak_ratio(space, dyadic_maximal(space, tree, f, min_resolution), l1))
    return best


@dataclass(frozen=True)
class RdiParams:
    """Constants of the relative distributional inequality, all measured on one space."""

    C0: float
    b_prime: float
    kappa: float
    I: float
    sigma: float
    D: float
    B0: MetricBall
    omega: float
    weak: float
    frak_M: float
    eta_prime: float
    eps: float
    eta: float

    def xi(self, l1: float) -> float:
        return self.frak_M * l1 / self.eta_prime

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["B0"] = self.B0.to_dict()
        return out


def rdi_params(
    space: FiniteMetricMeasureSpace,
    tree: DyadicCubeTree,
    I: float,
    B0: MetricBall,
    C0: float,
    eta_prime: float = 0.9,
    eps: float | None = None,
    weak: float | None = None,
) -> RdiParams:
    """Measure ``b', sigma, D, omega, frak_M`` and derive ``eta``.

    Resolution ``k`` is tree level ``k`` (cube scale ``delta^k``), so
    ``kappa = C1 delta^2`` and ``b' = 2 C1 + C0`` are absolute lengths.
    ``B0`` is enlarged to radius ``kappa`` when smaller.  ``eps``
    defaults to ``(1-eta')/(4D)``.
    """
    if not 0 < eta_prime < 1:
        raise InputError("eta' must lie in (0, 1)")
    kappa = tree.C1 * tree.delta**2
    sigma = covering_sigma(I, tree.C1, tree.delta)
    b_prime = 2 * tree.C1 + C0
    a0 = tree.a0
    D = estimate_doubling(space, a0, b_prime / a0).constant
    B0 = MetricBall(B0.center, max(B0.radius, kappa))
    k2 = resolution_level(tree, 2)
    lab = tree.labels[tree.index(k2)]
    touching = np.unique(lab[B0.mask(space)])
    masses = tree.cube_masses(space, k2)[touching]
    omega = float(masses.min()) if masses.size else 0.0
    if omega <= 0:
        raise ConfigurationError("no resolution-2 cube meets B0")
    weak = weak_type_constant(space, tree) if weak is None else weak
    frak_M = 2.0 * weak / omega
    eps = (1 - eta_prime) / (4 * D) if eps is None else eps
    if not 0 < eps < (1 - eta_prime) / (2 * D):
        raise InputError("eps must lie in (0, (1-eta')/(2D))")
    eta = 1 - sigma + 2 * eps * D / (sigma * (1 - eta_prime))
    return RdiParams(C0, b_prime, kappa, I, sigma, D, B0, omega, weak, frak_M, eta_prime, eps, eta)


@dataclass(frozen=True)
class RdiReport:
    xi: float
    alphas: tuple[float, ...]
    lhs: tuple[float, ...]
    rhs: tuple[float, ...]

    @property
    def verdict(self) -> bool:
        return all(l <= r * (1 + 1e-12) for l, r in zip(self.lhs, self.rhs))

    def to_dict(self) -> dict:
        return {"xi": self.xi, "alphas": list(self.alphas), "lhs": list(self.lhs), "rhs": list(self.rhs), "verdict": self.verdict}


def rdi_check(
    space: FiniteMetricMeasureSpace,
    tree: DyadicCubeTree,
    f,
    params: RdiParams,
    alpha_grid=None,
    family: BallFamily | None = None,
    n_alpha: int = 25,
) -> RdiReport:
    """``mu(A(alpha) cap S(eps alpha)^c) <= eta mu(A(eta' alpha))`` for ``alpha >= xi``.

    The default grid is geometric from ``xi`` to just above ``max M_2 f``.
    """
    f = np.asarray(f, dtype=float)
    l1 = float(np.sum(np.abs(f) * space.mass))
    xi = params.xi(l1)
    Mf = dyadic_maximal(space, tree, f)
    fam = ball_family(space, params.b_prime) if family is None else family
    sharp = sharp_function(space, f, params.b_prime, fam)
    if alpha_grid is None:
        top = float(Mf.max())
        alpha_grid = np.geomspace(xi, max(top, xi) * 1.05, n_alpha) if xi > 0 else np.zeros(0)
    alphas = np.asarray(alpha_grid, dtype=float)
    if np.any(alphas < xi * (1 - 1e-12)):
        raise InputError("alpha grid must lie in [xi, inf)")
    lhs, rhs = [], []
    for a in alphas:
        lhs.append(float(space.mass[(Mf > a) & ~(sharp > params.eps * a)].sum()))
        rhs.append(params.eta * float(space.mass[Mf > params.eta_prime * a].sum()))
    return RdiReport(float(xi), tuple(map(float, alphas)), tuple(lhs), tuple(rhs))


@dataclass(frozen=True)
class FSReport:
    p: float
    b_prime: float
    ratios: tuple[float, ...]
    skipped: int

    @property
    def min_ratio(self) -> float:
        return float(min(self.ratios)) if self.ratios else math.nan

    def to_dict(self) -> dict:
        return {"p": self.p, "b_prime": self.b_prime, "ratios": list(self.ratios), "min_ratio": self.min_ratio, "skipped": self.skipped}


def fefferman_stein_check(space: FiniteMetricMeasureSpace, functions, p: float, b_prime: float, family: BallFamily | None = None) -> FSReport:
    """``(||f||_1 + ||f^{#,b'}||_p) / ||f||_p`` over a suite; zero functions are skipped."""
    if not 1 < p < math.inf:
        raise InputError("p must lie in (1, inf)")
    fam = ball_family(space, b_prime) if family is None else family
    out, skipped = [], 0
    for f in functions:
        f = np.asarray(f, dtype=float)
        fp = float(np.sum(np.abs(f) ** p * space.mass)) ** (1 / p)
        if fp == 0:
            skipped += 1
            continue
        sh = sharp_function(space, f, b_prime, fam)
        num = float(np.sum(np.abs(f) * space.mass)) + float(np.sum(sh**p * space.mass)) ** (1 / p)
        out.append(num / fp)
    return FSReport(float(p), float(b_prime), tuple(out), skipped)

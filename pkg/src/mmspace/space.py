"""Finite metric measure spaces and the discretiser of the weighted spaces.

A :class:`FiniteMetricMeasureSpace` holds positive point masses and either a
dense distance matrix or a sparse graph whose shortest paths define the
metric (lazy mode, rows computed on demand and memoised).  Every other
module works on this substrate.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial.distance import cdist

from .errors import CapacityError, InputError
from .weights import Box, GridGraph, WeightSpec, _sign, weighted_mass

__all__ = [
    "FiniteMetricMeasureSpace",
    "GeometryParams",
    "DoublingReport",
    "MidpointReport",
    "discretize",
    "truncation_box",
    "estimate_doubling",
    "verify_approximate_midpoint",
    "DENSE_LIMIT",
    "grid_midpoint_R0",
]

DENSE_LIMIT = 20_000
DEFAULT_MEMORY_BUDGET = 2 * 1024**3


class FiniteMetricMeasureSpace:
    """Points ``0..n-1`` with masses and a metric.

    Parameters
    ----------
    mass : array_like, shape (n,)
        Strictly positive point masses.
    dist : ndarray, shape (n, n), optional
        Dense symmetric distance matrix.
    graph : sparse matrix, optional
        Weighted undirected graph; distances are its shortest paths.
        Exactly one of ``dist`` and ``graph`` must be given.
    coords : ndarray, shape (n, d), optional
    meta : dict, optional
        Free-form provenance (grid step, sign, box, longest edge ...).
    """

    def __init__(self, mass, dist=None, graph=None, coords=None, meta=None, validate=True):
        mass = np.array(mass, dtype=float).reshape(-1)
        if (dist is None) == (graph is None):
            raise InputError("give exactly one of dist and graph")
        if mass.size == 0:
            raise InputError("a space needs at least one point")
        if validate and not np.all(mass > 0):
            raise InputError("all masses must be positive")
        self.mass = mass
        self.mass.setflags(write=False)
        if dist is not None:
            dist = np.asarray(dist, dtype=float)
            if dist.shape != (mass.size, mass.size):
                raise InputError("distance matrix shape does not match masses")
            dist.setflags(write=False)
        else:
            graph = sparse.csr_matrix(graph)
            if graph.shape != (mass.size, mass.size):
                raise InputError("graph shape does not match masses")
        self.dist = dist
        self.graph = graph
        self.coords = None if coords is None else np.asarray(coords, dtype=float).reshape(mass.size, -1)
        self.meta = dict(meta or {})
        self._memo: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()
        self._diameter: float | None = None
        if validate and dist is not None:
            if np.any(np.diag(dist) != 0):
                raise InputError("dist(i, i) must be zero")
            if not np.array_equal(dist, dist.T):
                raise InputError("distance matrix must be symmetric")
            if np.any(dist < 0):
                raise InputError("distances must be nonnegative")

    # --- basic queries ------------------------------------------------
    @property
    def n(self) -> int:
        return self.mass.size

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    @property
    def is_dense(self) -> bool:
        return self.dist is not None

    @property
    def max_edge(self) -> float:
        """Grid relaxation used for midpoint checks (0 for abstract spaces)."""
        return float(self.meta.get("max_edge", 0.0))

    def row(self, i: int) -> np.ndarray:
        if self.dist is not None:
            return self.dist[i]
        with self._lock:
            cached = self._memo.get(int(i))
        if cached is not None:
            return cached
        r = dijkstra(self.graph, directed=False, indices=int(i))
        r.setflags(write=False)
        with self._lock:
            self._memo.setdefault(int(i), r)
        return r

    def rows(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        if self.dist is not None:
            return self.dist[idx]
        return np.stack([self.row(i) for i in idx]) if len(idx) else np.zeros((0, self.n))

    def distance(self, i: int, j: int) -> float:
        return float(self.row(i)[j])

    def dist_to_set(self, members) -> np.ndarray:
        """``rho(x, S)`` for every point ``x``; ``inf`` when ``S`` is empty."""
        mask = self._mask(members)
        if not mask.any():
            return np.full(self.n, np.inf)
        if self.dist is not None:
            idx = np.flatnonzero(mask)
            out = np.full(self.n, np.inf)
            for chunk in np.array_split(idx, max(1, len(idx) // 512)):
                np.minimum(out, self.dist[chunk].min(axis=0), out=out)
            return out
        return dijkstra(self.graph, directed=False, indices=np.flatnonzero(mask), min_only=True)

    def ball(self, center: int, radius: float) -> np.ndarray:
        """Closed ball ``{y : rho(center, y) <= radius}`` as a boolean mask."""
        return self.row(center) <= radius

    def measure(self, members) -> float:
        return float(self.mass[self._mask(members)].sum())

    def _mask(self, members) -> np.ndarray:
        members = np.asarray(members)
        if members.dtype == bool:
            if members.shape != (self.n,):
                raise InputError("boolean mask has the wrong length")
            return members
        mask = np.zeros(self.n, dtype=bool)
        mask[members.astype(np.int64)] = True
        return mask

    def diameter(self) -> float:
        if self._diameter is None:
            if self.dist is not None:
                self._diameter = float(self.dist.max())
            else:
                # lazy mode: one Dijkstra sweep per point
                self._diameter = float(max(self.row(i).max() for i in range(self.n)))
        return self._diameter

    def min_positive_distance(self) -> float:
        if self.dist is not None:
            d = self.dist[self.dist > 0]
            return float(d.min()) if d.size else 0.0
        return float(self.graph.data.min()) if self.graph.nnz else 0.0

    def mode(self) -> int:
        """Point of largest mass (ties by id)."""
        return int(np.argmax(self.mass))

    def triangle_violation(self, sample: int | None = None, seed: int = 0) -> float:
        """Largest ``d(i,j) - d(i,k) - d(k,j)`` over sampled (or all) triples."""
        idx = np.arange(self.n)
        if sample is not None and sample < self.n:
            idx = np.sort(np.random.default_rng(seed).choice(self.n, sample, replace=False))
        worst = -np.inf
        D = self.rows(idx)[:, idx]
        for k in range(len(idx)):
            worst = max(worst, float((D - D[:, [k]] - D[[k], :]).max()))
        return worst

    # --- construction and serialisation -------------------------------
    @classmethod
    def from_points(cls, coords, mass=None, meta=None) -> "FiniteMetricMeasureSpace":
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if mass is None:
            mass = np.full(len(coords), 1.0 / len(coords))
        return cls(mass, dist=cdist(coords, coords), coords=coords, meta=meta)

    def dense(self) -> "FiniteMetricMeasureSpace":
        if self.dist is not None:
            return self
        D = dijkstra(self.graph, directed=False)
        return FiniteMetricMeasureSpace(self.mass, dist=D, coords=self.coords, meta=self.meta)

    def to_dict(self) -> dict:
        D = self.dense().dist
        il = np.tril_indices(self.n, -1)
        out = {
            "format": "mmspace/1",
            "masses": self.mass.tolist(),
            "distances": D[il].tolist(),
            "meta": _jsonable(self.meta),
        }
        if self.coords is not None:
            out["points"] = self.coords.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FiniteMetricMeasureSpace":
        mass = np.asarray(data["masses"], dtype=float)
        n = mass.size
        D = np.zeros((n, n))
        il = np.tril_indices(n, -1)
        D[il] = np.asarray(data["distances"], dtype=float)
        D = D + D.T
        return cls(mass, dist=D, coords=data.get("points"), meta=data.get("meta"))

    def save(self, path) -> None:
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(json.dumps(self.to_dict(), sort_keys=True))
            return
        D = self.dense().dist
        il = np.tril_indices(self.n, -1)
        arrays = {"masses": self.mass, "distances": D[il], "meta": np.array(json.dumps(_jsonable(self.meta)))}
        if self.coords is not None:
            arrays["points"] = self.coords
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "FiniteMetricMeasureSpace":
        path = Path(path)
        if path.suffix == ".json":
            return cls.from_dict(json.loads(path.read_text()))
        with np.load(path) as z:
            data = {
                "masses": z["masses"],
                "distances": z["distances"],
                "meta": json.loads(str(z["meta"])),
                "points": z["points"] if "points" in z else None,
            }
        return cls.from_dict(data)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# discretisation


def truncation_box(spec: WeightSpec, tail: float = 1e-4, resolution: float = 0.01, start: float = 1.0) -> Box:
    """Smallest cube ``[-L, L]^d`` (L on a 1.02 ratio ladder) losing < ``tail`` of ``mu_{-phi}``."""
    d = spec.dimension
    res = resolution if d == 1 else max(resolution, 0.05)
    L = start
    while True:
        inner = weighted_mass(spec, "-", Box.cube(-L, L, d), res)
        outer = weighted_mass(spec, "-", Box.cube(-4 * L, 4 * L, d), res)
        if outer > 0 and (outer - inner) / outer < tail:
            return Box.cube(-L, L, d)
        L *= 1.02
        if L > 1e4:
            raise InputError("mu_{-phi} does not decay; cannot truncate")


def discretize(
    spec: WeightSpec,
    sign,
    box,
    h: float,
    mode: str = "auto",
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> FiniteMetricMeasureSpace:
    """Grid discretisation of ``(R^d, rho_phi, mu_{+-phi})`` restricted to ``box``.

    Points are grid nodes, masses ``exp(+-phi(x_i)) h^d`` and distances are
    shortest paths in the stencil graph of :class:`GridGraph`.  In one
    dimension the graph is a path, so distances are differences of the
    cumulative edge lengths.
    """
    s = _sign(sign)
    box = Box.coerce(box, spec.dimension)
    grid = GridGraph(spec, box, h)
    n = grid.n
    with np.errstate(over="ignore"):
        mass = np.exp(s * spec.value(grid.nodes)) * float(np.prod(grid.steps))
    if not np.all(np.isfinite(mass)) or not np.all(mass > 0):
        raise InputError("point masses overflow or underflow on this box")
    meta = {
        "spec": spec.to_dict(),
        "sign": "+" if s > 0 else "-",
        "box": box.to_list(),
        "h": float(h),
        "steps": grid.steps.tolist(),
        "shape": list(grid.shape),
        "max_edge": grid.max_edge_length,
    }
    if s < 0:
        res = float(np.min(grid.steps)) if spec.dimension == 1 else 0.05
        wide = weighted_mass(spec, "-", box.scaled(3.0), res)
        inside = weighted_mass(spec, "-", box, res)
        meta["tail_mass_fraction"] = max(0.0, (wide - inside) / wide)
    need = 8 * n * n
    if mode == "auto":
        mode = "dense" if (n <= DENSE_LIMIT and need <= memory_budget) else "lazy"
    if mode == "dense":
        if need > memory_budget:
            raise CapacityError(
                f"{n} points need {need / 2**30:.1f} GiB of distances (budget "
                f"{memory_budget / 2**30:.1f} GiB); use mode='lazy'"
            )
        if spec.dimension == 1:
            steps = np.asarray(grid.graph[np.arange(n - 1), np.arange(1, n)]).ravel()
            pos = np.concatenate([[0.0], np.cumsum(steps)])
            D = np.abs(pos[:, None] - pos[None, :])
        else:
            D = grid.all_pairs()
        return FiniteMetricMeasureSpace(mass, dist=D, coords=grid.nodes, meta=meta, validate=False)
    if mode == "lazy":
        return FiniteMetricMeasureSpace(mass, graph=grid.graph, coords=grid.nodes, meta=meta, validate=False)
    raise InputError(f"unknown storage mode {mode!r}")


# ---------------------------------------------------------------------------
# geometry parameters and checks


@dataclass(frozen=True)
class GeometryParams:
    """Scale ``b`` of the admissible balls and the midpoint constants ``(beta, R0)``."""

    b: float
    beta: float = 0.75
    R0: float = 0.0

    def __post_init__(self):
        if not self.b > 0:
            raise InputError("b must be positive")
        if not 0.5 < self.beta < 1:
            raise InputError("beta must lie in (1/2, 1)")
        if self.R0 < 0:
            raise InputError("R0 must be nonnegative")

    @property
    def threshold(self) -> float:
        return self.R0 / (1 - self.beta)

    def require_admissible(self) -> None:
        if not self.b > self.threshold:
            raise InputError(f"b={self.b} must exceed R0/(1-beta)={self.threshold}")

    def with_b(self, b: float) -> "GeometryParams":
        return GeometryParams(b, self.beta, self.R0)


@dataclass(frozen=True)
class DoublingReport:
    tau: float
    b: float
    constant: float
    witness_center: int
    witness_radius: float
    balls_tested: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _radii_and_masses(space: FiniteMetricMeasureSpace, c: int, b: float):
    row = space.row(c)
    order = np.argsort(row, kind="stable")
    d_sorted = row[order]
    cum = np.cumsum(space.mass[order])
    radii = np.unique(d_sorted[d_sorted <= b])
    if b < d_sorted[-1] and (radii.size == 0 or radii[-1] < b):
        radii = np.append(radii, b)
    return d_sorted, cum, radii


def estimate_doubling(space: FiniteMetricMeasureSpace, b: float, tau: float, center_sample=None) -> DoublingReport:
    """Largest ``mu(B(c, tau r)) / mu(B(c, r))`` over sampled centres and radii ``r <= b``.

    Radii are the distinct distances from each centre up to ``b`` plus ``b``
    itself.  Enlarged balls are concentric.
    """
    if tau < 1:
        raise InputError("tau must be >= 1")
    centers = np.arange(space.n) if center_sample is None else np.asarray(list(center_sample), dtype=np.int64)
    if centers.size == 0:
        raise InputError("empty centre sample")
    best, wc, wr, count = 1.0, int(centers[0]), 0.0, 0
    for c in centers:
        d_sorted, cum, radii = _radii_and_masses(space, int(c), b)
        small = cum[np.searchsorted(d_sorted, radii, side="right") - 1]
        big = cum[np.searchsorted(d_sorted, tau * radii, side="right") - 1]
        ratio = big / small
        count += radii.size
        k = int(np.argmax(ratio))
        if ratio[k] > best:
            best, wc, wr = float(ratio[k]), int(c), float(radii[k])
    return DoublingReport(float(tau), float(b), best, wc, wr, count)


@dataclass(frozen=True)
class MidpointReport:
    R0: float
    beta: float
    tolerance: float
    measured_beta: float
    worst_pair: tuple[int, int] | None
    pairs_tested: int
    verdict: bool

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["worst_pair"] = None if self.worst_pair is None else list(self.worst_pair)
        return out


def verify_approximate_midpoint(
    space: FiniteMetricMeasureSpace,
    R0: float,
    beta: float,
    tolerance: float | None = None,
    max_sources: int | None = None,
) -> MidpointReport:
    """Check that every pair with ``rho(x,y) > R0`` has a ``beta``-midpoint.

    The strict inequalities are relaxed by ``tolerance`` (default: the
    longest grid edge recorded in the space metadata).  ``measured_beta``
    is the largest ``min_z max(rho(x,z), rho(y,z)) / rho(x,y)`` seen.
    ``max_sources`` restricts the first point of each pair to an evenly
    spaced subset.
    """
    if not 0.5 < beta < 1:
        raise InputError("beta must lie in (1/2, 1)")
    tol = space.max_edge if tolerance is None else float(tolerance)
    sources = np.arange(space.n)
    if max_sources is not None and max_sources < space.n:
        sources = np.unique(np.linspace(0, space.n - 1, max_sources).round().astype(np.int64))
    worst_ratio, worst_pair, tested, ok = 0.0, None, 0, True
    for x in sources:
        rx = space.row(int(x))
        ys = np.flatnonzero((rx > R0) & (np.arange(space.n) > x))
        if ys.size == 0:
            continue
        for chunk in np.array_split(ys, max(1, ys.size // 256)):
            best = np.maximum(rx[None, :], space.rows(chunk)).min(axis=1)
            dxy = rx[chunk]
            ratio = best / dxy
            tested += chunk.size
            if np.any(best >= beta * dxy + tol):
                ok = False
            k = int(np.argmax(ratio))
            if ratio[k] > worst_ratio:
                worst_ratio, worst_pair = float(ratio[k]), (int(x), int(chunk[k]))
    return MidpointReport(float(R0), float(beta), tol, worst_ratio, worst_pair, tested, ok)


def grid_midpoint_R0(space: FiniteMetricMeasureSpace, beta: float) -> float:
    """``R0 = 4 (longest edge) / (2 beta - 1)``: the scale above which grid spaces have midpoints."""
    return 4.0 * space.max_edge / (2 * beta - 1)


"""Nested nets, Christ-type dyadic cubes, midpoint chains and net-ball coverings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, InputError
from .space import FiniteMetricMeasureSpace

__all__ = [
    "NetHierarchy",
    "DyadicCubeTree",
    "Chain",
    "AxiomReport",
    "build_nets",
    "maximal_net",
    "build_cubes",
    "verify_cube_axioms",
    "build_chain",
    "chain_bound",
    "chain_certificates",
    "covering_multiplicity",
    "net_link_graph",
]

_SHRINK = 1.0 - 1e-9


@dataclass(frozen=True)
class NetHierarchy:
    """Maximal ``delta^k``-separated nets ``Z^k`` for ``k`` in ``levels`` (coarse to fine)."""

    delta: float
    levels: tuple[int, ...]
    centers: dict

    def scale(self, k: int) -> float:
        return self.delta**k

    def at(self, k: int) -> np.ndarray:
        return self.centers[k]

    @property
    def finest(self) -> int:
        return self.levels[-1]

    @property
    def coarsest(self) -> int:
        return self.levels[0]


def default_levels(space: FiniteMetricMeasureSpace, delta: float) -> tuple[int, int]:
    """``k_min``: one centre suffices; ``k_max``: every point is a centre."""
    diam = space.diameter()
    dmin = space.min_positive_distance()
    lg = math.log(delta)
    k_min = 0 if diam <= 0 else math.floor(math.log(diam) / lg)
    k_max = k_min if dmin <= 0 else max(k_min, math.ceil(math.log(dmin) / lg))
    return k_min, k_max


def build_nets(space: FiniteMetricMeasureSpace, delta: float = 0.5, k_min=None, k_max=None, nested=True) -> NetHierarchy:
    """Greedy maximal separated nets, ascending point id, each level seeded with the previous one."""
    if not 0 < delta < 1:
        raise InputError("delta must lie in (0, 1)")
    lo, hi = default_levels(space, delta)
    k_min = lo if k_min is None else int(k_min)
    k_max = hi if k_max is None else int(k_max)
    if k_max < k_min:
        raise InputError("k_max must be >= k_min")
    centers: dict[int, np.ndarray] = {}
    prev = np.zeros(0, dtype=np.int64)
    for k in range(k_min, k_max + 1):
        prev = maximal_net(space, delta**k, prev if nested else None)
        centers[k] = prev
    return NetHierarchy(float(delta), tuple(range(k_min, k_max + 1)), centers)


def maximal_net(space: FiniteMetricMeasureSpace, s: float, seeds=None) -> np.ndarray:
    """Maximal ``s``-separated set containing ``seeds``, completed greedily by ascending id."""
    seeds = np.zeros(0, dtype=np.int64) if seeds is None else np.asarray(seeds, dtype=np.int64)
    chosen = list(seeds)
    covered = space.dist_to_set(seeds) < s if seeds.size else np.zeros(space.n, dtype=bool)
    for i in range(space.n):
        if not covered[i]:
            chosen.append(i)
            covered |= space.row(i) < s
    return np.array(sorted(chosen), dtype=np.int64)


def _nearest(space: FiniteMetricMeasureSpace, targets: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index into ``targets`` (sorted ids) of the nearest target for each query; ties go to the smaller id."""
    best = np.full(queries.size, np.inf)
    arg = np.zeros(queries.size, dtype=np.int64)
    for start in range(0, targets.size, 256):
        block = targets[start : start + 256]
        d = space.rows(block)[:, queries]
        j = d.argmin(axis=0)
        v = d[j, np.arange(queries.size)]
        better = v < best
        best[better] = v[better]
        arg[better] = start + j[better]
    return arg


@dataclass
class DyadicCubeTree:
    """Cube hierarchy: ``labels[i][x]`` is the index of the level-``levels[i]`` cube containing ``x``.

    ``parents[i][j]`` is the index at level ``levels[i-1]`` of the cube
    containing cube ``j`` of level ``levels[i]`` (``None`` for the top).
    """

    delta: float
    levels: tuple[int, ...]
    centers: list
    labels: list
    parents: list
    a0: float = 0.0
    C1: float = 0.0
    diameters: list = field(default_factory=list)
    gaps: list = field(default_factory=list)

    def index(self, k: int) -> int:
        try:
            return self.levels.index(k)
        except ValueError:
            raise InputError(f"level {k} not in tree") from None

    def scale(self, k: int) -> float:
        return self.delta**k

    def n_cubes(self, k: int) -> int:
        return len(self.centers[self.index(k)])

    def members(self, k: int, j: int) -> np.ndarray:
        return np.flatnonzero(self.labels[self.index(k)] == j)

    def all_members(self, k: int) -> list[np.ndarray]:
        lab = self.labels[self.index(k)]
        order = np.argsort(lab, kind="stable")
        bounds = np.searchsorted(lab[order], np.arange(self.n_cubes(k) + 1))
        return [order[bounds[j] : bounds[j + 1]] for j in range(self.n_cubes(k))]

    def cube_masses(self, space: FiniteMetricMeasureSpace, k: int) -> np.ndarray:
        return np.bincount(self.labels[self.index(k)], weights=space.mass, minlength=self.n_cubes(k))

    def cubes(self, min_level=None):
        """Iterate ``(level, index)`` over cubes with level >= ``min_level``."""
        for k in self.levels:
            if min_level is None or k >= min_level:
                for j in range(self.n_cubes(k)):
                    yield k, j

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "levels": list(self.levels),
            "a0": self.a0,
            "C1": self.C1,
            "cubes_per_level": {str(k): self.n_cubes(k) for k in self.levels},
            "centers": {str(k): self.centers[i].tolist() for i, k in enumerate(self.levels)},
            "labels": {str(k): self.labels[i].tolist() for i, k in enumerate(self.levels)},
        }


def _set_diameter(space: FiniteMetricMeasureSpace, members: np.ndarray) -> float:
    if members.size <= 1:
        return 0.0
    if members.size == space.n and space.is_dense:
        return space.diameter()
    best = 0.0
    for start in range(0, members.size, 1024):
        best = max(best, float(space.rows(members[start : start + 1024])[:, members].max()))
    return best


def _measure_constants(space, tree: DyadicCubeTree) -> None:
    a0, C1 = math.inf, 0.0
    tree.diameters, tree.gaps = [], []
    for i, k in enumerate(tree.levels):
        s = tree.delta**k
        diams = np.zeros(len(tree.centers[i]))
        gaps = np.zeros(len(tree.centers[i]))
        lab = tree.labels[i]
        for j, mem in enumerate(tree.all_members(k)):
            z = tree.centers[i][j]
            diams[j] = _set_diameter(space, mem)
            row = space.row(int(z))
            outside = lab != j
            # a cube equal to the whole space contains every ball about its centre
            gaps[j] = row[outside].min() if outside.any() else row.max()
        tree.diameters.append(diams)
        tree.gaps.append(gaps)
        C1 = max(C1, float(diams.max()) / s)
        pos = gaps[gaps > 0]
        if pos.size:
            a0 = min(a0, float(pos.min()) / s)
    tree.C1 = C1
    tree.a0 = (a0 if math.isfinite(a0) else 1.0) * _SHRINK


def build_cubes(space: FiniteMetricMeasureSpace, nets: NetHierarchy) -> DyadicCubeTree:
    """Cubes from nested nets.

    Finest level: each point joins its nearest centre (ties to the smaller
    id).  Coarser levels: a centre already present keeps itself as parent,
    any other centre attaches to its nearest coarser centre; a cube is the
    union of its children.  Nesting and the partition property hold by
    construction; ``a0`` and ``C1`` are measured afterwards.
    """
    levels = nets.levels
    for k_prev, k in zip(levels, levels[1:]):
        if not np.all(np.isin(nets.at(k_prev), nets.at(k))):
            raise InputError(f"nets are not nested between levels {k_prev} and {k}")
    n = space.n
    fine = nets.at(levels[-1])
    if fine.size == n:
        lab = np.arange(n)
    else:
        lab = _nearest(space, fine, np.arange(n))
        lab[fine] = np.arange(fine.size)
    labels = [lab]
    parents: list = [None]
    for k in reversed(levels[:-1]):
        children = nets.at(levels[levels.index(k) + 1])
        coarse = nets.at(k)
        parent = np.empty(children.size, dtype=np.int64)
        pos_in_coarse = np.searchsorted(coarse, children)
        present = (pos_in_coarse < coarse.size) & (coarse[np.minimum(pos_in_coarse, coarse.size - 1)] == children)
        parent[present] = pos_in_coarse[present]
        if (~present).any():
            parent[~present] = _nearest(space, coarse, children[~present])
        parents[0] = parent
        parents.insert(0, None)
        labels.insert(0, parent[labels[0]])
    tree = DyadicCubeTree(
        delta=nets.delta,
        levels=tuple(levels),
        centers=[nets.at(k) for k in levels],
        labels=labels,
        parents=parents,
    )
    _measure_constants(space, tree)
    return tree


@dataclass(frozen=True)
class AxiomReport:
    results: dict
    witnesses: dict

    @property
    def all_pass(self) -> bool:
        return all(self.results.values())

    def to_dict(self) -> dict:
        return {"results": dict(self.results), "witnesses": {k: v for k, v in self.witnesses.items() if v is not None}}


def verify_cube_axioms(space: FiniteMetricMeasureSpace, tree: DyadicCubeTree) -> AxiomReport:
    """Exhaustive finite check of partition, nesting, unique parents, diameter and inner-ball axioms."""
    res, wit = {}, {}
    # (i) each level partitions the space
    ok, w = True, None
    for i, k in enumerate(tree.levels):
        lab = tree.labels[i]
        counts = np.bincount(lab, minlength=len(tree.centers[i])) if lab.size else np.zeros(0)
        if lab.shape != (space.n,) or lab.min() < 0 or lab.max() >= len(tree.centers[i]) or np.any(counts == 0):
            ok, w = False, {"level": k}
            break
    res["i"], wit["i"] = ok, w
    # (ii) a finer cube lies in a coarser one or misses it: checked on consecutive levels
    ok, w = True, None
    for i in range(1, len(tree.levels)):
        fine, coarse = tree.labels[i], tree.labels[i - 1]
        first = np.full(len(tree.centers[i]), -1, dtype=np.int64)
        order = np.argsort(fine, kind="stable")
        starts = np.searchsorted(fine[order], np.arange(len(tree.centers[i])))
        first = order[np.minimum(starts, order.size - 1)]
        bad = np.flatnonzero(coarse != coarse[first[fine]])
        if bad.size:
            x = int(bad[0])
            ok, w = False, {"levels": [tree.levels[i - 1], tree.levels[i]], "pair": [int(first[fine[x]]), x]}
            break
    res["ii"], wit["ii"] = ok, w
    # (iii) the recorded parent is the unique coarser cube containing the child
    ok, w = True, None
    for i in range(1, len(tree.levels)):
        par = tree.parents[i]
        mismatch = np.flatnonzero(tree.labels[i - 1] != par[tree.labels[i]])
        if mismatch.size:
            x = int(mismatch[0])
            ok, w = False, {"level": tree.levels[i], "point": x, "cube": int(tree.labels[i][x])}
            break
    res["iii"], wit["iii"] = ok, w
    # (iv) diam(Q) <= C1 delta^k and (v) B(z, a0 delta^k) inside Q, with the centre in Q
    ok4, w4, ok5, w5 = True, None, True, None
    for i, k in enumerate(tree.levels):
        s = tree.delta**k
        lab = tree.labels[i]
        for j, mem in enumerate(tree.all_members(k)):
            z = int(tree.centers[i][j])
            if ok4:
                diam = _set_diameter(space, mem)
                if diam > tree.C1 * s * (1 + 1e-12):
                    ok4, w4 = False, {"level": k, "cube": j, "diameter": diam}
            if ok5:
                inside = space.ball(z, tree.a0 * s)
                if lab[z] != j or np.any(lab[inside] != j):
                    ok5, w5 = False, {"level": k, "cube": j, "center": z}
    res["iv"], wit["iv"] = ok4, w4
    res["v"], wit["v"] = ok5, w5
    return AxiomReport(res, wit)


# ---------------------------------------------------------------------------
# chains and coverings


def chain_bound(d: float, b: float, beta: float) -> float:
    """``4 (2d/b)^{1/(1 - log2(1+beta))} + 1``."""
    return 4.0 * (2.0 * d / b) ** (1.0 / (1.0 - math.log2(1.0 + beta))) + 1.0


@dataclass(frozen=True)
class Chain:
    points: tuple[int, ...]
    b: float
    beta: float
    links: tuple[float, ...]
    distance: float
    beta_effective: float

    @property
    def N(self) -> int:
        return len(self.points)

    @property
    def bound(self) -> float:
        return chain_bound(self.distance, self.b, self.beta)

    def to_dict(self) -> dict:
        return {
            "points": list(self.points),
            "b": self.b,
            "beta": self.beta,
            "links": list(self.links),
            "distance": self.distance,
            "N": self.N,
            "bound": self.bound,
            "beta_effective": self.beta_effective,
        }


def build_chain(
    space: FiniteMetricMeasureSpace,
    nets: NetHierarchy,
    level: int,
    o: int,
    z: int,
    b: float,
    beta: float,
    R0: float = 0.0,
    a0: float | None = None,
    tolerance: float | None = None,
) -> Chain:
    """Chain of level-``level`` centres from ``o`` to ``z`` with links shorter than ``b/2``.

    Links of length ``>= b/2`` are split at the best approximate midpoint
    snapped to the nearest net centre, recursively.
    """
    s = nets.delta**level
    centers = nets.at(level)
    if not np.all(np.isin([o, z], centers)):
        raise InputError("o and z must be net centres of the chosen level")
    if not 0.5 < beta < 1:
        raise InputError("beta must lie in (1/2, 1)")
    if not b > 4 * s * max(1.0 / (1.0 - beta), a0 or 0.0):
        raise InputError("b must exceed 4 delta^nu max(1/(1-beta), a0)")
    if a0 is not None and not s * min(1.0, 2 * a0) > R0:
        raise InputError("delta^nu min(1, 2 a0) must exceed R0")
    tol = space.max_edge if tolerance is None else tolerance
    beta_eff = 0.0

    def split(p: int, q: int) -> list[int]:
        nonlocal beta_eff
        d = space.distance(p, q)
        if p == q:
            return [p]
        if d < b / 2:
            return [p, q]
        score = np.maximum(space.row(p), space.row(q))
        z1 = int(np.argmin(score))
        if not score[z1] < beta * d + tol:
            raise GeometryError(f"no approximate midpoint for pair ({p}, {q}) at distance {d}")
        beta_eff = max(beta_eff, float(score[z1]) / d)
        m = int(centers[_nearest(space, centers, np.array([z1]))[0]])
        if m in (p, q):
            raise GeometryError(f"midpoint of ({p}, {q}) snapped onto an endpoint")
        return split(p, m)[:-1] + split(m, q)

    pts = split(int(o), int(z))
    links = tuple(space.distance(a, c) for a, c in zip(pts, pts[1:]))
    return Chain(tuple(pts), float(b), float(beta), links, space.distance(o, z), beta_eff)


def chain_certificates(space: FiniteMetricMeasureSpace, chain: Chain, inner_radius: float) -> list[bool]:
    """For each link j: ``B(z_{j+1}, inner_radius)`` lies in ``B(z_j, b)`` and ``B(z_{j+1}, b)``."""
    out = []
    for p, q in zip(chain.points, chain.points[1:]):
        inner = space.ball(q, inner_radius)
        out.append(bool(np.all(space.ball(p, chain.b)[inner]) and np.all(space.ball(q, chain.b)[inner])))
    return out


def covering_multiplicity(space: FiniteMetricMeasureSpace, nets: NetHierarchy, level: int, b: float):
    """Largest number ``N0`` of balls ``B(z, b)``, ``z`` in ``Z^level``, containing a point.

    Returns ``(N0, counts)``; raises if some point is uncovered.
    """
    counts = np.zeros(space.n, dtype=np.int64)
    for z in nets.at(level):
        counts += space.ball(int(z), b)
    if counts.min() < 1:
        raise GeometryError(f"point {int(np.argmin(counts))} is not covered: net is not maximal")
    return int(counts.max()), counts


def net_link_graph(space: FiniteMetricMeasureSpace, centers: np.ndarray, b: float) -> np.ndarray:
    """Adjacency (boolean) between centres closer than ``b/2``."""
    D = space.rows(centers)[:, centers]
    adj = D < b / 2
    np.fill_diagonal(adj, False)
    return adj

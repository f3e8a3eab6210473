"""Boundary layers, the complementary isoperimetric constant and its consequences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cubes import DyadicCubeTree
from .errors import InputError
from .space import FiniteMetricMeasureSpace

__all__ = [
    "MetricBall",
    "default_B0",
    "boundary_layer",
    "annuli_family",
    "slab_family",
    "cube_union_family",
    "IsoperimetryReport",
    "estimate_isoperimetric",
    "LayerGrowthReport",
    "verify_layer_growth",
    "DecayReport",
    "verify_complement_decay",
    "CoveringSelection",
    "covering_select",
    "covering_sigma",
]


@dataclass(frozen=True)
class MetricBall:
    """Closed ball of a finite space, given by a centre id and a radius."""

    center: int
    radius: float

    def mask(self, space: FiniteMetricMeasureSpace) -> np.ndarray:
        return space.ball(self.center, self.radius)

    def to_dict(self) -> dict:
        return {"center": int(self.center), "radius": float(self.radius)}


def default_B0(space: FiniteMetricMeasureSpace, fraction: float = 0.5) -> MetricBall:
    """Smallest closed ball at the mode holding more than ``fraction`` of the mass."""
    c = space.mode()
    row = space.row(c)
    order = np.argsort(row, kind="stable")
    cum = np.cumsum(space.mass[order])
    k = int(np.searchsorted(cum, fraction * space.total_mass, side="right"))
    k = min(k, space.n - 1)
    return MetricBall(c, float(row[order[k]]))


def _mask(space, A) -> np.ndarray:
    return space._mask(A)


def boundary_layer(space: FiniteMetricMeasureSpace, A, kappa: float):
    """Split ``A`` into ``A_kappa`` (``rho(x, A^c) <= kappa``) and ``A^kappa`` (the rest)."""
    a = _mask(space, A)
    if not a.any():
        raise InputError("A must be nonempty")
    if a.all():
        raise InputError("A must have a nonempty complement")
    d = space.dist_to_set(~a)
    layer = a & (d <= kappa)
    return layer, a & ~layer


# ---------------------------------------------------------------------------
# test families


def annuli_family(space: FiniteMetricMeasureSpace, center: int, radii) -> list[np.ndarray]:
    """Metric annuli ``r1 < rho(c, x) <= r2`` for consecutive radii, plus exteriors ``rho(c, x) > r``."""
    row = space.row(center)
    radii = np.sort(np.asarray(radii, dtype=float))
    out = [(row > r1) & (row <= r2) for r1, r2 in zip(radii, radii[1:])]
    out += [row > r for r in radii]
    return out


def slab_family(space: FiniteMetricMeasureSpace, offsets, n_directions: int = 4) -> list[np.ndarray]:
    """Half-spaces ``{x . u > t}`` intersected with the grid, for evenly spread unit vectors ``u``."""
    if space.coords is None:
        raise InputError("slabs need point coordinates")
    X = space.coords
    d = X.shape[1]
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ang = 2 * np.pi * np.arange(n_directions) / n_directions
        dirs = np.zeros((n_directions, d))
        dirs[:, 0], dirs[:, 1] = np.cos(ang), np.sin(ang)
    return [X @ u > t for u in dirs for t in offsets]


def cube_union_family(tree: DyadicCubeTree, levels, count: int, per_set: int, seed: int = 0) -> list[np.ndarray]:
    """Unions of ``per_set`` random cubes drawn at the given levels."""
    rng = np.random.default_rng(seed)
    out = []
    for k in levels:
        lab = tree.labels[tree.index(k)]
        m = tree.n_cubes(k)
        for _ in range(count):
            pick = rng.choice(m, size=min(per_set, m), replace=False)
            out.append(np.isin(lab, pick))
    return out


# ---------------------------------------------------------------------------
# the isoperimetric constant


@dataclass(frozen=True)
class IsoperimetryReport:
    B0: MetricBall
    kappa_grid: tuple[float, ...]
    C_t: tuple[float, ...]
    I_hat: float
    kappa0: float | None
    sets_tested: int
    worst_set: tuple[int, ...]
    nonpositive_sets: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "B0": self.B0.to_dict(),
            "kappa_grid": list(self.kappa_grid),
            "C_t": list(self.C_t),
            "I_hat": self.I_hat,
            "kappa0": self.kappa0,
            "sets_tested": self.sets_tested,
            "worst_set": list(self.worst_set),
            "nonpositive_sets": list(self.nonpositive_sets),
        }


def _clean_family(space, B0: MetricBall, family, strict: bool) -> list[np.ndarray]:
    ball = B0.mask(space)
    out = []
    for A in family:
        a = _mask(space, A)
        if strict and (a & ball).any():
            raise InputError("test set meets the closed ball B0")
        a = a & ~ball
        if a.any() and not a.all():
            out.append(a)
    return out


def estimate_isoperimetric(
    space: FiniteMetricMeasureSpace,
    B0: MetricBall,
    test_family,
    kappa_grid,
    strict: bool = True,
) -> IsoperimetryReport:
    """``C_t = inf { mu(A_kappa) / (kappa mu(A)) : A in family, kappa <= t }`` on ``kappa_grid``.

    ``I_hat`` is ``C_t`` at the smallest ``t`` (the curve is nonincreasing).
    With ``strict=False`` the sets are first cut down to ``A \\ B0``
    instead of being rejected.
    """
    ks = np.sort(np.asarray(kappa_grid, dtype=float))
    if ks.size == 0 or ks[0] <= 0:
        raise InputError("kappa grid must be nonempty and positive")
    sets = _clean_family(space, B0, test_family, strict)
    if not sets:
        raise InputError("no admissible test set")
    ratios = np.empty((len(sets), ks.size))
    for i, a in enumerate(sets):
        d = space.dist_to_set(~a)[a]
        m = space.mass[a]
        order = np.argsort(d, kind="stable")
        cum = np.cumsum(m[order])
        layer = np.where(d.min() <= ks, cum[np.searchsorted(d[order], ks, side="right") - 1], 0.0)
        ratios[i] = layer / (ks * m.sum())
    running = np.minimum.accumulate(ratios, axis=1)
    C = running.min(axis=0)
    worst = tuple(int(j) for j in running.argmin(axis=0))
    positive = np.flatnonzero(C > 0)
    kappa0 = float(ks[positive[-1]]) if positive.size else None
    nonpos = tuple(int(i) for i in np.flatnonzero(ratios.min(axis=1) <= 0))
    return IsoperimetryReport(
        B0, tuple(float(k) for k in ks), tuple(float(c) for c in C), float(C[0]), kappa0, len(sets), worst, nonpos
    )


# ---------------------------------------------------------------------------
# exponential layer growth and complement decay


@dataclass(frozen=True)
class LayerGrowthReport:
    mode: str
    I: float
    rows: tuple[dict, ...]

    @property
    def verdict(self) -> bool:
        return all(r["pass"] for r in self.rows if not r.get("skipped"))

    @property
    def min_margin(self) -> float:
        m = [r["lhs"] - r["rhs"] for r in self.rows if not r.get("skipped")]
        return float(min(m)) if m else math.inf

    def to_dict(self) -> dict:
        return {"mode": self.mode, "I": self.I, "verdict": self.verdict, "min_margin": self.min_margin, "rows": list(self.rows)}


def verify_layer_growth(space: FiniteMetricMeasureSpace, B0: MetricBall, A, I: float, t_grid, mode: str = "full") -> LayerGrowthReport:
    """Check ``mu(A_t) >= (1 - e^{-I t}) mu(A)`` (``full``) or ``(1 - e^{-I t/2}) mu(A) / 2`` (``half``).

    Hypotheses are tested per ``t``: ``full`` needs ``A`` disjoint from the
    closed ball ``B0``; ``half`` needs ``A cap B0`` inside ``A_t``.  Rows
    whose hypothesis fails are marked skipped.
    """
    if mode not in ("full", "half"):
        raise InputError("mode must be 'full' or 'half'")
    a = _mask(space, A)
    ball = B0.mask(space)
    if not a.any() or a.all():
        raise InputError("A must be a nonempty proper subset")
    d = space.dist_to_set(~a)
    muA = float(space.mass[a].sum())
    rows = []
    for t in np.asarray(t_grid, dtype=float):
        layer = a & (d <= t)
        lhs = float(space.mass[layer].sum())
        if mode == "full":
            ok_h = not (a & ball).any()
            rhs = (1 - math.exp(-I * t)) * muA
        else:
            ok_h = not (a & ball & ~layer).any()
            rhs = (1 - math.exp(-I * t / 2)) * muA / 2
        row = {"t": float(t), "lhs": lhs, "rhs": rhs, "pass": lhs >= rhs * (1 - 1e-12)}
        if not ok_h:
            row.update(skipped=True, note="hypothesis on A and B0 fails", **{"pass": True})
        rows.append(row)
    return LayerGrowthReport(mode, float(I), tuple(rows))


@dataclass(frozen=True)
class DecayReport:
    center: int
    radii: tuple[float, ...]
    masses: tuple[float, ...]
    C: float
    rate: float
    r_squared: float
    I: float | None
    tolerance: float

    @property
    def verdict(self) -> bool | None:
        if self.I is None:
            return None
        return self.rate >= self.I * (1 - self.tolerance)

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["radii"], out["masses"] = list(self.radii), list(self.masses)
        out["verdict"] = self.verdict
        return out


def verify_complement_decay(
    space: FiniteMetricMeasureSpace, x: int, r_grid, I: float | None = None, tolerance: float = 0.1, floor: float = 1e-12
) -> DecayReport:
    """Least-squares fit ``log mu(B(x, r)^c) ~ log C - rate * r``.

    Radii with complement mass below ``floor * mu(M)`` (including empty
    complements) are dropped before fitting.
    """
    row = space.row(x)
    order = np.argsort(row, kind="stable")
    cum = np.cumsum(space.mass[order])
    total = cum[-1]
    rs = np.asarray(r_grid, dtype=float)
    comp = total - cum[np.searchsorted(row[order], rs, side="right") - 1]
    keep = comp > floor * total
    if keep.sum() < 2:
        raise InputError("fewer than two radii with a nonnegligible complement")
    r, y = rs[keep], np.log(comp[keep])
    slope, icpt = np.polyfit(r, y, 1)
    resid = y - (slope * r + icpt)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss if ss > 0 else 1.0
    return DecayReport(int(x), tuple(map(float, r)), tuple(map(float, comp[keep])), float(math.exp(icpt)), float(-slope), r2, I, tolerance)


# ---------------------------------------------------------------------------
# covering by disjoint cubes


def covering_sigma(I: float, C1: float, delta: float) -> float:
    """``(1 - e^{-I C1 delta^2 / 2}) / 4``."""
    return (1 - math.exp(-I * C1 * delta**2 / 2)) / 4


@dataclass(frozen=True)
class CoveringSelection:
    cubes: tuple[tuple[int, int], ...]
    mass: float
    bound: float
    candidates: int
    method: str

    @property
    def verdict(self) -> bool:
        return self.mass >= self.bound

    def to_dict(self) -> dict:
        return {
            "cubes": [list(c) for c in self.cubes],
            "mass": self.mass,
            "bound": self.bound,
            "candidates": self.candidates,
            "method": self.method,
            "verdict": self.verdict,
        }


def _best_laminar(tree, cand: dict, masses: dict, levels) -> tuple[float, list]:
    """Heaviest disjoint subfamily of a laminar candidate family (exact, by tree recursion)."""
    best: dict = {}
    # process finest level first so children are ready
    for i in range(len(levels) - 1, -1, -1):
        k = levels[i]
        child_sum: dict = {}
        if i + 1 < len(levels):
            kk = levels[i + 1]
            par = tree.parents[tree.index(kk)]
            for j, (val, pick) in best.get(kk, {}).items():
                p = int(par[j])
                s, lst = child_sum.get(p, (0.0, []))
                child_sum[p] = (s + val, lst + pick)
        cur = {}
        for j in range(tree.n_cubes(k)):
            s, lst = child_sum.get(j, (0.0, []))
            if (k, j) in cand and masses[(k, j)] >= s:
                cur[j] = (masses[(k, j)], [(k, j)])
            elif s > 0:
                cur[j] = (s, lst)
        best[k] = cur
    top = best.get(levels[0], {})
    total = sum(v for v, _ in top.values())
    picks = [c for _, lst in top.values() for c in lst]
    return total, picks


def covering_select(
    space: FiniteMetricMeasureSpace,
    tree: DyadicCubeTree,
    A,
    kappa: float,
    B0: MetricBall,
    nu: int,
    I: float,
) -> CoveringSelection:
    """Disjoint cubes of level ``>= nu`` inside ``A`` within ``kappa`` of ``A^c``.

    Greedy by (distance to ``A^c``, level); if the greedy mass misses
    ``(1 - e^{-I kappa/2}) mu(A) / 4`` the exact optimum over the laminar
    candidate family is computed instead.
    """
    a = _mask(space, A)
    if not a.any() or a.all():
        raise InputError("A must be a nonempty proper subset")
    lab = tree.labels[tree.index(nu)]
    inside = np.bincount(lab, weights=a.astype(float), minlength=tree.n_cubes(nu))
    sizes = np.bincount(lab, minlength=tree.n_cubes(nu))
    if np.any((inside > 0) & (inside < sizes)):
        raise InputError(f"A is not a union of level-{nu} cubes")
    d = space.dist_to_set(~a)
    layer = a & (d <= kappa)
    if (a & B0.mask(space) & ~layer).any():
        raise InputError("A cap B0 must lie in A_kappa")
    levels = [k for k in tree.levels if k >= nu]
    cand, masses, dist = [], {}, {}
    for k in levels:
        for j, mem in enumerate(tree.all_members(k)):
            if a[mem].all():
                dq = float(d[mem].min())
                if dq <= kappa:
                    cand.append((dq, k, j))
                    masses[(k, j)] = float(space.mass[mem].sum())
                    dist[(k, j)] = dq
    cand.sort()
    bound = (1 - math.exp(-I * kappa / 2)) * float(space.mass[a].sum()) / 4
    taken = np.zeros(space.n, dtype=bool)
    chosen, total = [], 0.0
    for _, k, j in cand:
        mem = tree.members(k, j)
        if not taken[mem].any():
            taken[mem] = True
            chosen.append((k, j))
            total += masses[(k, j)]
    method = "greedy"
    if total < bound:
        total, chosen = _best_laminar(tree, {(k, j) for _, k, j in cand}, masses, levels)
        method = "exact"
    return CoveringSelection(tuple(chosen), float(total), float(bound), len(cand), method)

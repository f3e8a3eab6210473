"""Mean oscillation over admissible balls: BMO norms, sharp functions, John-Nirenberg tails."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .space import FiniteMetricMeasureSpace

__all__ = [
    "BallFamily",
    "ball_family",
    "ball_oscillations",
    "BmoResult",
    "bmo_norm",
    "bmo_norm_bruteforce",
    "sharp_function",
    "ScaleReport",
    "verify_scale_independence",
    "JNReport",
    "john_nirenberg_profile",
]

# bound on the temporary (balls x points) oscillation block
_BLOCK = 4_000_000


@dataclass(frozen=True)
class BallFamily:
    """All closed balls ``B(c, r)``, ``r`` a distance from ``c`` with ``r <= b``.

    For centre ``c``: ``orders[c]`` lists the points by distance (truncated
    to the largest ball), ``ends[c][e]`` is the size of ball ``e`` and
    ``radii[c][e]`` its radius.  Balls are nested prefixes of ``orders[c]``.
    """

    b: float
    orders: tuple
    ends: tuple
    radii: tuple

    @property
    def count(self) -> int:
        return int(sum(e.size for e in self.ends))

    def restrict(self, c: float) -> "BallFamily":
        """Subfamily of balls of radius ``<= c``."""
        if c > self.b:
            raise InputError("can only restrict to a smaller scale")
        orders, ends, radii = [], [], []
        for o, e, r in zip(self.orders, self.ends, self.radii):
            keep = r <= c
            ends.append(e[keep])
            radii.append(r[keep])
            orders.append(o[: e[keep][-1]] if keep.any() else o[:0])
        return BallFamily(float(c), tuple(orders), tuple(ends), tuple(radii))


def ball_family(space: FiniteMetricMeasureSpace, b: float) -> BallFamily:
    if b < 0:
        raise InputError("b must be nonnegative")
    orders, ends, radii = [], [], []
    for c in range(space.n):
        row = space.row(c)
        order = np.argsort(row, kind="stable")
        d = row[order]
        K = int(np.searchsorted(d, b, side="right"))
        d = d[:K]
        # last index of each tie group
        last = np.flatnonzero(np.append(d[1:] != d[:-1], True)) if K else np.zeros(0, dtype=np.int64)
        orders.append(order[:K])
        ends.append(last + 1)
        radii.append(d[last])
    if sum(e.size for e in ends) == 0:
        raise InputError("empty ball family")
    return BallFamily(float(b), tuple(orders), tuple(ends), tuple(radii))


def _osc_center(v: np.ndarray, w: np.ndarray, ends: np.ndarray, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean-oscillation integrals ``mu(B)^{-1} sum_B w |v - v_B|^q`` for nested prefixes."""
    W = np.cumsum(w)[ends - 1]
    mean = np.cumsum(w * v)[ends - 1] / W
    out = np.empty(ends.size)
    step = max(1, _BLOCK // max(1, int(ends[-1])))
    for s in range(0, ends.size, step):
        e = ends[s : s + step]
        K = int(e[-1])
        dev = np.abs(v[None, :K] - mean[s : s + e.size, None])
        if q != 1:
            dev = dev**q
        dev *= w[None, :K]
        dev[np.arange(K)[None, :] >= e[:, None]] = 0.0
        out[s : s + e.size] = dev.sum(axis=1)
    return out / W, mean


def ball_oscillations(space: FiniteMetricMeasureSpace, family: BallFamily, f, q: float = 1.0) -> list[np.ndarray]:
    """Per centre, ``(mu(B)^{-1} int_B |f - f_B|^q)`` for every ball of the family."""
    f = np.asarray(f, dtype=float)
    if q < 1:
        raise InputError("q must be >= 1")
    if not np.all(np.isfinite(f)):
        raise InputError("f must be finite")
    out = []
    for order, ends in zip(family.orders, family.ends):
        if ends.size == 0:
            out.append(np.zeros(0))
            continue
        osc, _ = _osc_center(f[order], space.mass[order], ends, q)
        out.append(osc)
    return out


@dataclass(frozen=True)
class BmoResult:
    b: float
    q: float
    N: float
    l1_norm: float
    total: float
    center: int
    radius: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def bmo_norm(space: FiniteMetricMeasureSpace, f, b: float, q: float = 1.0, family: BallFamily | None = None) -> BmoResult:
    """``N_b^q(f)`` as the exact maximum over the finite ball family, with the attaining ball."""
    fam = ball_family(space, b) if family is None else family
    f = np.asarray(f, dtype=float)
    osc = ball_oscillations(space, fam, f, q)
    best, bc, br = -1.0, 0, 0.0
    for c, o in enumerate(osc):
        if o.size:
            k = int(np.argmax(o))
            if o[k] > best:
                best, bc, br = float(o[k]), c, float(fam.radii[c][k])
    N = max(best, 0.0) ** (1.0 / q)
    l1 = float(np.sum(np.abs(f) * space.mass))
    return BmoResult(fam.b, float(q), N, l1, l1 + N, bc, br)


def bmo_norm_bruteforce(space: FiniteMetricMeasureSpace, f, b: float, q: float = 1.0) -> float:
    """Reference ``N_b^q``: every centre, every distinct radius, recomputed from scratch."""
    f = np.asarray(f, dtype=float)
    best = 0.0
    for c in range(space.n):
        row = space.row(c)
        for r in np.unique(row[row <= b]):
            B = row <= r
            w = space.mass[B]
            fb = float(np.sum(f[B] * w) / w.sum())
            best = max(best, float(np.sum(np.abs(f[B] - fb) ** q * w) / w.sum()))
    return best ** (1.0 / q)


def sharp_function(space: FiniteMetricMeasureSpace, f, b: float, family: BallFamily | None = None) -> np.ndarray:
    """Noncentred local sharp function: sup over admissible balls containing ``x``."""
    fam = ball_family(space, b) if family is None else family
    osc = ball_oscillations(space, fam, f, 1.0)
    out = np.zeros(space.n)
    for order, ends, o in zip(fam.orders, fam.ends, osc):
        if o.size == 0:
            continue
        # a point at prefix position p lies in every ball whose size exceeds p
        suff = np.maximum.accumulate(o[::-1])[::-1]
        sizes = np.diff(np.concatenate(([0], ends)))
        vals = np.repeat(suff, sizes)
        idx = order[: ends[-1]]
        np.maximum.at(out, idx, vals)
    return out


@dataclass(frozen=True)
class ScaleReport:
    b: float
    c: float
    q: float
    N_b: tuple[float, ...]
    N_c: tuple[float, ...]
    monotone: bool
    max_ratio: float
    min_ratio: float
    skipped: int

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["N_b"], out["N_c"] = list(self.N_b), list(self.N_c)
        return out


def verify_scale_independence(space: FiniteMetricMeasureSpace, functions, b: float, c: float, q: float = 1.0) -> ScaleReport:
    """Compare ``N_c^q`` and ``N_b^q`` (``c < b``) over a suite; ``N_c <= N_b`` must hold exactly."""
    if not c < b:
        raise InputError("need c < b")
    fam_b = ball_family(space, b)
    fam_c = fam_b.restrict(c)
    Nb, Nc = [], []
    for f in functions:
        Nb.append(bmo_norm(space, f, b, q, fam_b).N)
        Nc.append(bmo_norm(space, f, c, q, fam_c).N)
    Nb_a, Nc_a = np.array(Nb), np.array(Nc)
    ok = Nc_a > 0
    ratios = Nb_a[ok] / Nc_a[ok]
    return ScaleReport(
        float(b),
        float(c),
        float(q),
        tuple(Nb),
        tuple(Nc),
        bool(np.all(Nc_a <= Nb_a)),
        float(ratios.max()) if ratios.size else math.nan,
        float(ratios.min()) if ratios.size else math.nan,
        int((~ok).sum()),
    )


@dataclass(frozen=True)
class JNReport:
    center: int
    radius: float
    N1: float
    s: tuple[float, ...]
    tail: tuple[float, ...]
    c: float
    C: float
    r_squared: float
    fit_points: int

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["s"], out["tail"] = list(self.s), list(self.tail)
        return out


def john_nirenberg_profile(
    space: FiniteMetricMeasureSpace, f, b: float, center: int, radius: float, s_grid, N1: float | None = None
) -> JNReport:
    """Tail ``mu({x in B : |f - f_B| > s}) / mu(B)`` and a fit ``C exp(-c s / N_b^1)`` on its positive part."""
    f = np.asarray(f, dtype=float)
    if N1 is None:
        N1 = bmo_norm(space, f, b, 1.0).N
    if N1 <= 0:
        raise InputError("f has zero oscillation")
    B = space.ball(center, radius)
    w = space.mass[B]
    dev = np.abs(f[B] - np.sum(f[B] * w) / w.sum())
    s = np.sort(np.asarray(s_grid, dtype=float))
    order = np.argsort(dev)
    dsort, cw = dev[order], np.cumsum(w[order][::-1])[::-1]
    pos = np.searchsorted(dsort, s, side="right")
    tail = np.where(pos < dsort.size, cw[np.minimum(pos, dsort.size - 1)], 0.0) / w.sum()
    keep = tail > 0
    if keep.sum() < 2:
        raise InputError("fewer than two grid values with a positive tail")
    x, y = s[keep] / N1, np.log(tail[keep])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss if ss > 0 else 1.0
    return JNReport(int(center), float(radius), float(N1), tuple(map(float, s)), tuple(map(float, tail)), float(-slope), float(math.exp(icpt)), r2, int(keep.sum()))

"""Atoms, atomic decompositions, the H1-BMO pairing and gluing of local representatives."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .bmo import ball_family, bmo_norm
from .cubes import chain_bound, maximal_net
from .errors import ConsistencyError, GeometryError, InputError
from .space import FiniteMetricMeasureSpace

__all__ = [
    "Atom",
    "Decomposition",
    "BallIndex",
    "check_atom",
    "make_atom",
    "exceptional_atom",
    "atomic_decompose",
    "DualityReport",
    "duality_check",
    "GlueResult",
    "glue_representatives",
    "link_tree",
]

_EXC = "exceptional"
_STD = "standard"


@dataclass(frozen=True, eq=False)
class Atom:
    kind: str
    values: np.ndarray
    r: float
    center: int | None = None
    radius: float | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "r": self.r if math.isfinite(self.r) else "inf",
            "center": self.center,
            "radius": self.radius,
            "support": np.flatnonzero(self.values).tolist(),
        }


def exceptional_atom(space: FiniteMetricMeasureSpace, r: float = 2.0) -> Atom:
    """The constant ``1/mu(M)``."""
    return Atom(_EXC, np.full(space.n, 1.0 / space.total_mass), float(r))


def _lr_norm(space, h: np.ndarray, r: float) -> float:
    if math.isinf(r):
        return float(np.abs(h).max())
    return float(np.sum(np.abs(h) ** r * space.mass) ** (1.0 / r))


class BallIndex:
    """Rank tables answering "mass of the closed ball ``B(c, rho(c, j))``" in O(1)."""

    def __init__(self, space: FiniteMetricMeasureSpace):
        D = space.rows(np.arange(space.n))
        order = np.argsort(D, axis=1, kind="stable")
        n = space.n
        rank = np.empty_like(order)
        rows = np.arange(n)[:, None]
        rank[rows, order] = np.arange(n)[None, :]
        ds = np.take_along_axis(D, order, axis=1)
        cum = np.cumsum(space.mass[order], axis=1)
        # closed balls: every position takes the cumulative mass at the end of its tie group
        is_end = np.concatenate([ds[:, 1:] != ds[:, :-1], np.ones((n, 1), bool)], axis=1)
        tie_end = np.flip(np.minimum.accumulate(np.flip(np.where(is_end, cum, np.inf), axis=1), axis=1), axis=1)
        self.D = D
        self.rank = rank
        self.ball_mass = tie_end

    def min_ball(self, support: np.ndarray, b: float) -> tuple[int, float, float]:
        """Centre, radius and mass of the lightest ball of radius ``<= b`` covering ``support``."""
        sub = self.D[:, support]
        j = sub.argmax(axis=1)
        need = sub[np.arange(sub.shape[0]), j]
        ok = np.flatnonzero(need <= b)
        if ok.size == 0:
            raise GeometryError("support does not fit in a ball of radius <= b")
        masses = self.ball_mass[ok, self.rank[ok, support[j[ok]]]]
        k = int(np.argmin(masses))
        c = int(ok[k])
        return c, float(need[c]), float(masses[k])


def make_atom(space: FiniteMetricMeasureSpace, h: np.ndarray, b: float, r: float, index: BallIndex) -> tuple[float, Atom]:
    """Normalise a mean-zero ``h`` supported in a small ball into ``lambda * atom``."""
    supp = np.flatnonzero(h)
    c, rad, muB = index.min_ball(supp, b)
    if math.isinf(r):
        lam = muB * float(np.abs(h).max())
    else:
        lam = muB ** (1.0 - 1.0 / r) * _lr_norm(space, h, r)
    return lam, Atom(_STD, h / lam, float(r), c, rad)


def check_atom(space: FiniteMetricMeasureSpace, atom: Atom, b: float, rtol: float = 1e-12) -> tuple[bool, dict]:
    """Support, cancellation and size conditions of a (1, r) atom."""
    a = atom.values
    if atom.kind == _EXC:
        ok = bool(np.allclose(a, 1.0 / space.total_mass, rtol=rtol, atol=0))
        return ok, {"exceptional": ok}
    ball = space.ball(atom.center, atom.radius)
    muB = float(space.mass[ball].sum())
    scale = float(np.sum(np.abs(a) * space.mass))
    mean = abs(float(np.sum(a * space.mass)))
    size = (muB * float(np.abs(a).max())) if math.isinf(atom.r) else muB ** (1 - 1 / atom.r) * _lr_norm(space, a, atom.r)
    res = {
        "radius": atom.radius <= b * (1 + rtol),
        "support": not np.any(a[~ball]),
        "mean_zero": mean <= rtol * max(scale, 1e-300),
        # (mu(B)^{-1} int |a|^r)^{1/r} <= mu(B)^{-1}  <=>  mu(B)^{1-1/r} ||a||_r <= 1
        "size": size <= 1 + rtol,
        "l1": scale <= 1 + rtol,
    }
    return all(res.values()), res


@dataclass
class Decomposition:
    lambdas: list = field(default_factory=list)
    atoms: list = field(default_factory=list)
    residual: np.ndarray | None = None

    def reconstruct(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        for lam, a in zip(self.lambdas, self.atoms):
            out += lam * a.values
        return out

    @property
    def h1_bound(self) -> float:
        return float(np.sum(np.abs(self.lambdas)))

    def to_dict(self) -> dict:
        return {
            "terms": len(self.atoms),
            "h1_bound": self.h1_bound,
            "lambdas": [float(x) for x in self.lambdas],
            "atoms": [a.to_dict() for a in self.atoms],
            "residual_max": None if self.residual is None else float(np.abs(self.residual).max()),
        }


def link_tree(space: FiniteMetricMeasureSpace, centers: np.ndarray, b: float, root: int = 0):
    """Breadth-first spanning tree of the graph joining centres closer than ``b/2``.

    Returns ``(order, parent)`` as indices into ``centers`` (parent of the root is -1).
    """
    D = space.rows(centers)[:, centers]
    adj = D < b / 2
    np.fill_diagonal(adj, False)
    parent = np.full(centers.size, -2, dtype=np.int64)
    parent[root] = -1
    order, queue = [], deque([root])
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in np.flatnonzero(adj[u] & (parent == -2)):
            parent[v] = u
            queue.append(int(v))
    if (parent == -2).any():
        miss = int(np.flatnonzero(parent == -2)[0])
        raise GeometryError(f"centre {int(centers[miss])} is not linked to centre {int(centers[root])} by any chain")
    return np.array(order), parent


def atomic_decompose(
    space: FiniteMetricMeasureSpace,
    f,
    b: float,
    r: float = 2.0,
    centers=None,
    index: BallIndex | None = None,
    rtol: float = 1e-12,
) -> Decomposition:
    """Exact finite decomposition ``f = sum lambda_k a_k``.

    ``f`` minus its mean is cut along the nearest-centre cells of a
    maximal ``b/8``-net; each cell piece is made mean-zero by subtracting
    its integral times the normalised indicator ``u`` of ``B(z, b/4)``, and
    the subtracted masses travel to the root along a spanning tree of
    links shorter than ``b/2`` as ``S (u_child - u_parent)``.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (space.n,):
        raise InputError("f must have one value per point")
    if r <= 1:
        raise InputError("r must exceed 1")
    index = BallIndex(space) if index is None else index
    dec = Decomposition()
    total = space.total_mass
    mean_int = float(np.sum(f * space.mass))
    g = f - mean_int / total
    scale = float(np.sum(np.abs(f) * space.mass))
    if mean_int != 0:
        dec.lambdas.append(mean_int)
        dec.atoms.append(exceptional_atom(space, r))
    if not np.any(np.abs(g) > rtol * max(scale, 1e-300) / total):
        dec.residual = f - dec.reconstruct(space.n)
        return dec

    supp = np.flatnonzero(f)
    # fast path: f is already a multiple of a standard atom
    if abs(mean_int) <= rtol * scale and np.any(index.D[:, supp].max(axis=1) <= b):
        dec = Decomposition()
        lam, atom = make_atom(space, f, b, r, index)
        dec.lambdas.append(lam)
        dec.atoms.append(atom)
        dec.residual = f - dec.reconstruct(space.n)
        return dec

    if centers is None:
        centers = maximal_net(space, b / 8)
    centers = np.asarray(centers, dtype=np.int64)
    Dc = index.D[centers]
    cell = Dc.argmin(axis=0)
    u = []
    for z in centers:
        ball = index.D[z] <= b / 4
        u.append(ball / float(space.mass[ball].sum()))
    order, parent = link_tree(space, centers, b)
    s = np.zeros(centers.size)
    for a in range(centers.size):
        P = cell == a
        s[a] = float(np.sum(g[P] * space.mass[P]))
        h = np.where(P, g, 0.0) - s[a] * u[a]
        if np.any(h):
            lam, atom = make_atom(space, h, b, r, index)
            dec.lambdas.append(lam)
            dec.atoms.append(atom)
    # push subtree sums towards the root, leaves first
    S = s.copy()
    for a in order[::-1]:
        p = parent[a]
        if p < 0:
            continue
        if S[a] != 0:
            h = S[a] * (u[a] - u[p])
            if np.any(h):
                lam, atom = make_atom(space, h, b, r, index)
                dec.lambdas.append(lam)
                dec.atoms.append(atom)
        S[p] += S[a]
    dec.residual = f - dec.reconstruct(space.n)
    return dec


@dataclass(frozen=True)
class DualityReport:
    bmo_total: float
    pairings: tuple[float, ...]
    bounds: tuple[float, ...]
    min_slack: float

    @property
    def verdict(self) -> bool:
        return self.min_slack >= 0

    def to_dict(self) -> dict:
        return {
            "bmo_total": self.bmo_total,
            "pairings": list(self.pairings),
            "bounds": list(self.bounds),
            "min_slack": self.min_slack,
            "verdict": self.verdict,
        }


def duality_check(space: FiniteMetricMeasureSpace, f, decompositions, b: float, r: float = 2.0, family=None) -> DualityReport:
    """``|int f g| <= (||f||_1 + N_b^{r'}(f)) sum |lambda|`` for each decomposition of ``g``."""
    f = np.asarray(f, dtype=float)
    rp = math.inf if r == 1 else (1.0 if math.isinf(r) else r / (r - 1))
    if math.isinf(rp):
        raise InputError("r = 1 has no finite dual exponent")
    fam = ball_family(space, b) if family is None else family
    total = bmo_norm(space, f, b, rp, fam).total
    pair, bnd = [], []
    for dec in decompositions:
        g = dec.reconstruct(space.n)
        pair.append(abs(float(np.sum(f * g * space.mass))))
        bnd.append(total * dec.h1_bound)
    slack = float(min(bb - pp for pp, bb in zip(pair, bnd))) if pair else math.inf
    return DualityReport(float(total), tuple(pair), tuple(bnd), slack)


@dataclass(frozen=True, eq=False)
class GlueResult:
    values: np.ndarray
    centers: np.ndarray
    eta: np.ndarray
    hops: np.ndarray
    distance: np.ndarray
    L: float
    D: float
    beta: float
    b: float
    bounds: np.ndarray

    @property
    def within_bound(self) -> bool:
        return bool(np.all(np.abs(self.eta) <= self.bounds * (1 + 1e-12)))

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "eta": self.eta.tolist(),
            "hops": self.hops.tolist(),
            "bounds": self.bounds.tolist(),
            "L": self.L,
            "D": self.D,
            "beta": self.beta,
            "b": self.b,
            "within_bound": self.within_bound,
        }


def glue_representatives(
    space: FiniteMetricMeasureSpace,
    centers,
    b: float,
    locals_: dict,
    o: int,
    beta: float,
    inner_radius: float,
    tol: float = 1e-9,
) -> GlueResult:
    """Assemble ``f^l = l^{B_alpha} + eta^{B_alpha}`` on the covering ``B_alpha = B(z_alpha, b)``.

    ``eta`` is zero on the base ball and propagates along links shorter
    than ``b/2``.  ``D`` is the largest ratio ``mu(B_parent or B_child) /
    mu(B(z_child, inner_radius))`` over the links used, and each ``eta``
    is compared with ``max(2, 8 (2d/b)^{1/(1-log2(1+beta))}) sqrt(D) L``.
    """
    centers = np.asarray(centers, dtype=np.int64)
    pos = {int(z): i for i, z in enumerate(centers)}
    if int(o) not in pos:
        raise InputError("o must be one of the centres")
    if set(int(k) for k in locals_) != set(pos):
        raise InputError("one local representative per centre is required")
    balls = [space.ball(int(z), b) for z in centers]
    loc = [np.asarray(locals_[int(z)], dtype=float) for z in centers]
    order, parent = link_tree(space, centers, b, root=pos[int(o)])
    eta = np.zeros(centers.size)
    hops = np.zeros(centers.size, dtype=np.int64)
    D = 1.0
    for a in order:
        p = parent[a]
        if p < 0:
            continue
        ov = balls[a] & balls[p]
        diff = (loc[p] + eta[p] - loc[a])[ov]
        scale = max(float(np.abs(loc[p][ov]).max()), float(np.abs(loc[a][ov]).max()), 1.0)
        if diff.max() - diff.min() > tol * scale:
            w = int(np.flatnonzero(ov)[int(np.argmax(np.abs(diff - diff.mean())))])
            raise ConsistencyError(f"overlap of centres {int(centers[p])} and {int(centers[a])} not constant at point {w}")
        m = space.mass[ov]
        eta[a] = float(np.sum(diff * m) / m.sum())
        hops[a] = hops[p] + 1
        inner = float(space.mass[space.ball(int(centers[a]), inner_radius)].sum())
        D = max(D, float(space.mass[balls[p]].sum()) / inner, float(space.mass[balls[a]].sum()) / inner)
    values = np.full(space.n, np.nan)
    for a in order:
        cand = loc[a] + eta[a]
        fresh = balls[a] & np.isnan(values)
        values[fresh] = cand[fresh]
        seen = balls[a] & ~fresh
        if seen.any():
            gap = np.abs(values[seen] - cand[seen])
            if gap.max() > tol * max(1.0, float(np.abs(cand[seen]).max())):
                w = int(np.flatnonzero(seen)[int(np.argmax(gap))])
                raise ConsistencyError(f"glued function disagrees with ball {int(centers[a])} at point {w}")
    L = max(math.sqrt(float(np.sum(loc[a][balls[a]] ** 2 * space.mass[balls[a]])) / float(space.mass[balls[a]].sum())) for a in range(centers.size))
    dist = space.row(int(o))[centers]
    bounds = np.array([max(2.0, 2.0 * (chain_bound(d, b, beta) - 1.0)) for d in dist]) * math.sqrt(D) * L
    return GlueResult(values, centers, eta, hops, dist, L, D, float(beta), float(b), bounds)

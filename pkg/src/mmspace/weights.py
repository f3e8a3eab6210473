"""Weight functions phi on R^d and the conformal geometry they induce.

A weight ``phi`` defines the conformal factor ``m = 1 + |grad phi|``, the
length metric ``rho_phi`` with line element ``m |dx|`` and the measures
``d mu_{+-phi} = exp(+-phi) dx``.  This module evaluates those objects,
checks the tameness/admissibility criteria numerically, computes grid
geodesics and weighted masses, and probes the two one-dimensional integral
lemmas used to prove the isoperimetric property of the weighted spaces.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.csgraph import dijkstra
from scipy.special import erfi

from .errors import EvaluationError, InputError, ResolutionError

__all__ = [
    "Box",
    "Ball",
    "WeightSpec",
    "TamenessReport",
    "AdmissibilityReport",
    "GridGraph",
    "check_tame",
    "check_admissible",
    "geodesic_distance",
    "metric_equivalence",
    "weighted_mass",
    "verify_integral_lemma",
    "stencil_anisotropy",
]

RADIAL_FAMILIES = ("constant", "power", "gaussian", "exponential", "erfi")
FAMILIES = RADIAL_FAMILIES + ("linear-combination", "tabulated")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``prod [lo_i, hi_i]``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise InputError("box bounds must be non-empty and of equal length")
        if any(not (h > l) for l, h in zip(self.lo, self.hi)):
            raise InputError(f"degenerate box {self.lo} x {self.hi}")

    @classmethod
    def cube(cls, lo: float, hi: float, d: int) -> "Box":
        return cls((float(lo),) * d, (float(hi),) * d)

    @classmethod
    def coerce(cls, box, d: int | None = None) -> "Box":
        if isinstance(box, Box):
            return box
        arr = np.asarray(box, dtype=float)
        if arr.ndim == 1 and arr.size == 2:
            if d is None:
                d = 1
            return cls.cube(arr[0], arr[1], d)
        if arr.ndim == 2 and arr.shape[1] == 2:
            return cls(tuple(arr[:, 0]), tuple(arr[:, 1]))
        raise InputError(f"cannot interpret {box!r} as a box")

    @property
    def dimension(self) -> int:
        return len(self.lo)

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= np.array(self.lo)) & (x <= np.array(self.hi)), axis=1)

    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def scaled(self, factor: float) -> "Box":
        c = (np.array(self.lo) + np.array(self.hi)) / 2
        half = (np.array(self.hi) - np.array(self.lo)) / 2 * factor
        return Box(tuple(c - half), tuple(c + half))

    def to_list(self) -> list[list[float]]:
        return [[l, h] for l, h in zip(self.lo, self.hi)]


@dataclass(frozen=True)
class Ball:
    """Euclidean ball, used as a quadrature region."""

    center: tuple[float, ...]
    radius: float

    def bounding_box(self) -> Box:
        c = np.asarray(self.center, dtype=float)
        return Box(tuple(c - self.radius), tuple(c + self.radius))


def _radial_profile(family: str, alpha: float | None, c: float):
    """Return (F, F', F'') for phi(x) = F(|x|)."""
    if family == "constant":
        zero = lambda r: np.zeros_like(r)  # noqa: E731
        return zero, zero, zero
    if family == "gaussian":
        family, alpha = "power", 2.0
    if family == "power":
        a = float(alpha)

        def F(r):
            return c * r**a

        def dF(r):
            with np.errstate(divide="ignore", invalid="ignore"):
                if a == 1.0:
                    return np.full_like(r, c)
                return c * a * r ** (a - 1)

        def d2F(r):
            with np.errstate(divide="ignore", invalid="ignore"):
                if a == 1.0:
                    return np.zeros_like(r)
                if a == 2.0:
                    return np.full_like(r, 2.0 * c)
                return c * a * (a - 1) * r ** (a - 2)

        return F, dF, d2F
    if family == "exponential":
        a = float(alpha)

        def F(r):
            return c * np.exp(r**a)

        def dF(r):
            with np.errstate(divide="ignore", invalid="ignore"):
                return c * a * r ** (a - 1) * np.exp(r**a)

        def d2F(r):
            with np.errstate(divide="ignore", invalid="ignore"):
                return c * (a * (a - 1) * r ** (a - 2) + a * a * r ** (2 * a - 2)) * np.exp(r**a)

        return F, dF, d2F
    if family == "erfi":
        # F(r) = int_0^r exp(t^2) dt
        return (
            lambda r: c * 0.5 * math.sqrt(math.pi) * erfi(r),
            lambda r: c * np.exp(r * r),
            lambda r: c * 2.0 * r * np.exp(r * r),
        )
    raise InputError(f"unknown radial family {family!r}")


@dataclass(frozen=True, eq=False)
class WeightSpec:
    """A weight function phi on R^d with gradient and Hessian.

    Parameters
    ----------
    family : str
        One of ``constant``, ``power`` (``c |x|^alpha``), ``gaussian``
        (``c |x|^2``), ``exponential`` (``c exp(|x|^alpha)``), ``erfi``
        (``c int_0^|x| exp(t^2) dt``), ``linear-combination`` or
        ``tabulated``.
    dimension : int
    alpha : float, optional
        Exponent for ``power`` and ``exponential``.
    coefficient : float
        Multiplier ``c`` for the radial families.
    tau0 : float, optional
        phi is C^2 on ``|x| >= tau0``.  Defaults per family.
    components : tuple of (float, WeightSpec)
        Terms of a linear combination.
    grid : tuple of 1-D arrays, values : ndarray
        Node coordinates and phi values of a tabulated weight.
    """

    family: str
    dimension: int
    alpha: float | None = None
    coefficient: float = 1.0
    tau0: float | None = None
    components: tuple = ()
    grid: tuple | None = None
    values: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown weight family {self.family!r}")
        if int(self.dimension) < 1:
            raise InputError("dimension must be a positive integer")
        if self.family in ("power", "exponential"):
            if self.alpha is None or not self.alpha > 0:
                raise InputError(f"family {self.family} needs alpha > 0")
        if self.family == "linear-combination":
            for coef, sub in self.components:
                if sub.dimension != self.dimension:
                    raise InputError("component dimension mismatch")
        if self.family == "tabulated":
            if self.grid is None or self.values is None:
                raise InputError("tabulated weight needs grid and values")
            if len(self.grid) != self.dimension:
                raise InputError("grid must have one axis per dimension")
        if self.tau0 is None:
            object.__setattr__(self, "tau0", self._default_tau0())

    def _default_tau0(self) -> float:
        if self.family == "power":
            return 0.0 if self.alpha >= 2 or self.alpha == 1.0 else 1.0
        if self.family == "exponential":
            return 0.0 if self.alpha >= 2 else 1.0
        if self.family == "erfi":
            return 0.0 if self.dimension == 1 else 1.0
        if self.family == "linear-combination":
            return max((s.tau0 for _, s in self.components), default=0.0)
        return 0.0

    # --- constructors -------------------------------------------------
    @classmethod
    def constant(cls, d: int = 1) -> "WeightSpec":
        return cls("constant", d)

    @classmethod
    def power(cls, alpha: float, d: int = 1, coefficient: float = 1.0, tau0=None) -> "WeightSpec":
        return cls("power", d, alpha=float(alpha), coefficient=coefficient, tau0=tau0)

    @classmethod
    def gaussian(cls, d: int = 1) -> "WeightSpec":
        return cls("gaussian", d)

    @classmethod
    def exponential(cls, alpha: float = 2.0, d: int = 1) -> "WeightSpec":
        return cls("exponential", d, alpha=float(alpha))

    @classmethod
    def combination(cls, terms: Sequence[tuple[float, "WeightSpec"]]) -> "WeightSpec":
        terms = tuple((float(c), s) for c, s in terms)
        if not terms:
            raise InputError("empty linear combination")
        return cls("linear-combination", terms[0][1].dimension, components=terms)

    @classmethod
    def tabulated(cls, axes: Sequence[np.ndarray], values: np.ndarray, tau0: float = 0.0) -> "WeightSpec":
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        values = np.asarray(values, dtype=float)
        if values.shape != tuple(len(a) for a in axes):
            raise InputError("values shape does not match grid axes")
        return cls("tabulated", len(axes), grid=axes, values=values, tau0=tau0)

    # --- evaluation ---------------------------------------------------
    def _points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1, 1)
        elif x.ndim == 1:
            x = x.reshape(1, -1) if x.size == self.dimension else x.reshape(-1, 1)
        if x.shape[1] != self.dimension:
            raise InputError(f"points must have {self.dimension} coordinates")
        return x

    def _tab(self):
        if "tab" not in self._cache:
            grads = np.gradient(self.values, *self.grid, edge_order=2)
            if self.dimension == 1:
                grads = [grads]
            hess = []
            for g in grads:
                gg = np.gradient(g, *self.grid, edge_order=2)
                hess.append([gg] if self.dimension == 1 else gg)
            kw = dict(method="linear", bounds_error=True)
            self._cache["tab"] = (
                RegularGridInterpolator(self.grid, self.values, **kw),
                [RegularGridInterpolator(self.grid, g, **kw) for g in grads],
                [[RegularGridInterpolator(self.grid, h, **kw) for h in row] for row in hess],
            )
        return self._cache["tab"]

    def value(self, x) -> np.ndarray:
        x = self._points(x)
        if self.family in RADIAL_FAMILIES:
            F, _, _ = _radial_profile(self.family, self.alpha, self.coefficient)
            return F(np.linalg.norm(x, axis=1))
        if self.family == "linear-combination":
            return sum(c * s.value(x) for c, s in self.components)
        try:
            return self._tab()[0](x)
        except ValueError as exc:
            raise EvaluationError(str(exc)) from exc

    def grad(self, x) -> np.ndarray:
        x = self._points(x)
        if self.family in RADIAL_FAMILIES:
            _, dF, _ = _radial_profile(self.family, self.alpha, self.coefficient)
            r = np.linalg.norm(x, axis=1)
            out = np.zeros_like(x)
            nz = r > 0
            out[nz] = (dF(r[nz]) / r[nz])[:, None] * x[nz]
            if not np.all(np.isfinite(out)):
                raise EvaluationError(f"gradient of {self.family} weight overflowed")
            return out
        if self.family == "linear-combination":
            return sum(c * s.grad(x) for c, s in self.components)
        try:
            return np.stack([g(x) for g in self._tab()[1]], axis=1)
        except ValueError as exc:
            raise EvaluationError(str(exc)) from exc

    def grad_norm(self, x) -> np.ndarray:
        """|grad phi|; radial families use |F'(|x|)| so the origin is handled by continuity."""
        x = self._points(x)
        if self.family in RADIAL_FAMILIES:
            _, dF, _ = _radial_profile(self.family, self.alpha, self.coefficient)
            r = np.linalg.norm(x, axis=1)
            with np.errstate(invalid="ignore"):
                g = np.abs(dF(r))
            g = np.where(np.isnan(g), 0.0, g)
            if np.any(np.isinf(g)):
                raise EvaluationError("gradient is not finite at some evaluation point")
            return g
        return np.linalg.norm(self.grad(x), axis=1)

    def hess(self, x) -> np.ndarray:
        x = self._points(x)
        n, d = x.shape
        if self.family in RADIAL_FAMILIES:
            _, dF, d2F = _radial_profile(self.family, self.alpha, self.coefficient)
            r = np.linalg.norm(x, axis=1)
            out = np.zeros((n, d, d))
            eye = np.eye(d)
            nz = r > 0
            if np.any(nz):
                u = x[nz] / r[nz, None]
                uu = u[:, :, None] * u[:, None, :]
                out[nz] = d2F(r[nz])[:, None, None] * uu + (dF(r[nz]) / r[nz])[:, None, None] * (eye - uu)
            if np.any(~nz):
                with np.errstate(invalid="ignore", divide="ignore"):
                    h0 = d2F(np.zeros(1))[0]
                out[~nz] = h0 * eye
            return out
        if self.family == "linear-combination":
            return sum(c * s.hess(x) for c, s in self.components)
        H = self._tab()[2]
        try:
            return np.stack([np.stack([H[i][j](x) for j in range(d)], axis=1) for i in range(d)], axis=1)
        except ValueError as exc:
            raise EvaluationError(str(exc)) from exc

    def hess_norm(self, x) -> np.ndarray:
        """Operator norm of the Hessian."""
        h = self.hess(x)
        h = 0.5 * (h + np.swapaxes(h, 1, 2))
        with np.errstate(invalid="ignore"):
            if not np.all(np.isfinite(h)):
                out = np.full(len(h), np.inf)
                ok = np.all(np.isfinite(h), axis=(1, 2))
                if np.any(ok):
                    out[ok] = np.max(np.abs(np.linalg.eigvalsh(h[ok])), axis=1)
                return out
        return np.max(np.abs(np.linalg.eigvalsh(h)), axis=1)

    def m(self, x) -> np.ndarray:
        """Conformal factor ``1 + |grad phi|``."""
        return 1.0 + self.grad_norm(x)

    def grad_m_norm(self, x) -> np.ndarray:
        """|grad m| = |Hess phi . grad phi / |grad phi||, zero where grad phi vanishes."""
        x = self._points(x)
        if self.family in RADIAL_FAMILIES:
            _, _, d2F = _radial_profile(self.family, self.alpha, self.coefficient)
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.abs(d2F(np.linalg.norm(x, axis=1)))
        g = self.grad(x)
        gn = np.linalg.norm(g, axis=1)
        unit = np.divide(g, gn[:, None], out=np.zeros_like(g), where=gn[:, None] > 0)
        return np.linalg.norm(np.einsum("nij,nj->ni", self.hess(x), unit), axis=1)

    def radial_derivative(self, x) -> np.ndarray:
        x = self._points(x)
        r = np.linalg.norm(x, axis=1)
        g = self.grad(x)
        return np.divide(np.einsum("ni,ni->n", x, g), r, out=np.zeros(len(x)), where=r > 0)

    # --- serialisation ------------------------------------------------
    def to_dict(self) -> dict:
        out: dict = {"family": self.family, "dimension": int(self.dimension), "tau0": float(self.tau0)}
        if self.alpha is not None:
            out["alpha"] = float(self.alpha)
        if self.coefficient != 1.0:
            out["coefficient"] = float(self.coefficient)
        if self.family == "linear-combination":
            out["components"] = [[c, s.to_dict()] for c, s in self.components]
        if self.family == "tabulated":
            out["grid"] = [a.tolist() for a in self.grid]
            out["values"] = self.values.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "WeightSpec":
        family = data["family"]
        kw = dict(
            dimension=int(data["dimension"]),
            alpha=data.get("alpha"),
            coefficient=float(data.get("coefficient", 1.0)),
            tau0=data.get("tau0"),
        )
        if family == "linear-combination":
            kw["components"] = tuple((float(c), cls.from_dict(s)) for c, s in data["components"])
        if family == "tabulated":
            kw["grid"] = tuple(np.asarray(a, dtype=float) for a in data["grid"])
            kw["values"] = np.asarray(data["values"], dtype=float)
        return cls(family, **kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "WeightSpec":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# tameness and admissibility


@dataclass(frozen=True)
class TamenessReport:
    radius: float
    constant: float
    constant_half_domain: float
    ac_ratio: float
    ac_ratio_half_domain: float
    analytic_flag: bool
    verdict: bool
    growth_tolerance: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _grid_axes(domain: Box, sample_count: int) -> list[np.ndarray]:
    return [np.linspace(l, h, sample_count) for l, h in zip(domain.lo, domain.hi)]


def _tame_constant(m_grid: np.ndarray, spacing: np.ndarray, R: float) -> float:
    """max m(x)/m(y) over grid pairs with |x - y| < R."""
    d = m_grid.ndim
    kmax = [int(math.ceil(R / s)) for s in spacing]
    best = 1.0
    for k in itertools.product(*[range(-km, km + 1) for km in kmax]):
        if k <= (0,) * d:
            continue  # each unordered offset once
        if np.linalg.norm(np.array(k) * spacing) >= R:
            continue
        a = tuple(slice(max(0, -ki), m_grid.shape[i] - max(0, ki)) for i, ki in enumerate(k))
        b = tuple(slice(max(0, ki), m_grid.shape[i] - max(0, -ki)) for i, ki in enumerate(k))
        if any(s.start >= s.stop for s in a):
            continue
        ratio = m_grid[a] / m_grid[b]
        best = max(best, float(ratio.max()), float((1.0 / ratio).max()))
    return best


def _ac_ratio(spec: WeightSpec, pts: np.ndarray) -> float:
    r = np.linalg.norm(pts, axis=1)
    pts = pts[r >= spec.tau0]
    if len(pts) == 0:
        return 0.0
    with np.errstate(invalid="ignore", over="ignore"):
        ratio = spec.grad_m_norm(pts) / spec.m(pts)
    ratio = np.where(np.isnan(ratio), 0.0, ratio)
    return float(np.max(ratio))


def check_tame(
    spec: WeightSpec,
    R: float,
    domain,
    sample_count: int = 101,
    growth_tolerance: float = 1.5,
) -> TamenessReport:
    """Empirical tameness constant ``C(R)`` of ``m = 1 + |grad phi|``.

    ``C(R)`` is the largest ratio ``m(x)/m(y)`` over grid pairs with
    ``|x - y| < R`` and therefore a lower bound for the true constant on
    ``domain``.  Since a finite sample is always bounded, the verdict asks
    that neither ``C(R)`` nor ``sup |grad m|/m`` grows by more than
    ``growth_tolerance`` when the domain is doubled (half domain -> domain).
    """
    if not R > 0:
        raise InputError("R must be positive")
    domain = Box.coerce(domain, spec.dimension)
    if domain.dimension != spec.dimension:
        raise InputError("domain dimension does not match the weight")
    if sample_count < 2:
        raise InputError("need at least two samples per axis")

    def measure(box: Box):
        axes = _grid_axes(box, sample_count)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dimension)
        with np.errstate(over="ignore"):
            m = spec.m(mesh)
        if not np.all(np.isfinite(m)):
            raise EvaluationError("conformal factor overflowed on the sampling grid")
        spacing = np.array([a[1] - a[0] for a in axes])
        shape = tuple(len(a) for a in axes)
        return _tame_constant(m.reshape(shape), spacing, R), _ac_ratio(spec, mesh)

    c_full, ac_full = measure(domain)
    c_half, ac_half = measure(domain.scaled(0.5))
    analytic = bool(ac_full <= growth_tolerance * ac_half + 1e-12)
    verdict = bool(analytic and c_full <= growth_tolerance * c_half + 1e-12)
    return TamenessReport(
        radius=float(R),
        constant=c_full,
        constant_half_domain=c_half,
        ac_ratio=ac_full,
        ac_ratio_half_domain=ac_half,
        analytic_flag=analytic,
        verdict=verdict,
        growth_tolerance=growth_tolerance,
    )


@dataclass(frozen=True)
class AdmissibilityReport:
    tame: bool
    divergent: bool
    hessian_ratio_tail: float
    radial_ratio_floor: float
    hessian_threshold: float
    radial_threshold: float
    shell: tuple[float, float]
    verdict: bool

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["shell"] = list(self.shell)
        return out


def _directions(d: int, count: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        t = np.linspace(0, 2 * np.pi, count, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    v = np.random.default_rng(0).standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def check_admissible(
    spec: WeightSpec,
    domain,
    shell_radius: float,
    R: float = 1.0,
    sample_count: int = 101,
    n_directions: int = 32,
    n_radii: int = 17,
    hessian_threshold: float = 0.1,
    radial_threshold: float = 0.05,
) -> AdmissibilityReport:
    """Finite check of admissibility on the shell ``r <= |x| <= 2r``.

    Sub-checks: tameness of ``m`` on ``domain``; ``|grad phi|`` strictly
    increasing along every sampled ray across the shell; max of
    ``|Hess phi|/|grad phi|^2`` on the shell below ``hessian_threshold``;
    min of ``d_r phi / |grad phi|`` above ``radial_threshold``.
    """
    if not shell_radius > spec.tau0:
        raise InputError(f"shell radius {shell_radius} must exceed tau0={spec.tau0}")
    tame = check_tame(spec, R, domain, sample_count).verdict
    dirs = _directions(spec.dimension, n_directions)
    radii = np.linspace(shell_radius, 2 * shell_radius, n_radii)
    pts = (radii[None, :, None] * dirs[:, None, :]).reshape(-1, spec.dimension)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        g = spec.grad_norm(pts)
        hn = spec.hess_norm(pts)
        radial = spec.radial_derivative(pts)
        hess_ratio = np.where(g > 0, hn / g**2, np.inf)
        radial_ratio = np.where(g > 0, radial / np.where(g > 0, g, 1.0), -np.inf)
    along = g.reshape(len(dirs), n_radii)
    divergent = bool(np.all(np.diff(along, axis=1) > 0))
    tail = float(np.max(hess_ratio))
    floor = float(np.min(radial_ratio))
    verdict = bool(tame and divergent and tail < hessian_threshold and floor > radial_threshold)
    return AdmissibilityReport(
        tame=tame,
        divergent=divergent,
        hessian_ratio_tail=tail,
        radial_ratio_floor=floor,
        hessian_threshold=hessian_threshold,
        radial_threshold=radial_threshold,
        shell=(float(shell_radius), float(2 * shell_radius)),
        verdict=verdict,
    )


# ---------------------------------------------------------------------------
# grid geodesics


def stencil_anisotropy(d: int) -> float:
    """Worst ratio of the (3^d - 1)-stencil path metric to the Euclidean one.

    The cheapest stencil path to ``v`` (coordinates sorted by modulus)
    walks ``|v_k| - |v_{k+1}|`` along the diagonal with ``k`` unit
    components, which costs ``sqrt(k)`` per unit step.
    """
    if d == 1:
        return 1.0
    if d == 2:
        return 1.0 / math.cos(math.pi / 8)
    v = np.abs(np.random.default_rng(0).standard_normal((200_000, d)))
    v = -np.sort(-v, axis=1)
    steps = v - np.concatenate([v[:, 1:], np.zeros((len(v), 1))], axis=1)
    cost = steps @ np.sqrt(np.arange(1, d + 1))
    return float(np.max(cost / np.linalg.norm(v, axis=1))) * 1.02


class GridGraph:
    """Uniform grid on a box with axis and diagonal edges weighted by ``int m ds``.

    Edge weights use the two-point trapezoid rule ``|a-b| (m(a)+m(b))/2``.
    """

    def __init__(self, spec: WeightSpec, box, h: float):
        if not h > 0:
            raise InputError("grid step h must be positive")
        box = Box.coerce(box, spec.dimension)
        if box.dimension != spec.dimension:
            raise InputError("box dimension does not match the weight")
        self.spec = spec
        self.box = box
        counts = [int(round((hi - lo) / h)) + 1 for lo, hi in zip(box.lo, box.hi)]
        if any(c < 2 for c in counts):
            raise ResolutionError("grid step larger than the box")
        self.axes = [np.linspace(lo, hi, c) for lo, hi, c in zip(box.lo, box.hi, counts)]
        self.shape = tuple(counts)
        self.steps = np.array([a[1] - a[0] for a in self.axes])
        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.nodes = np.stack(mesh, axis=-1).reshape(-1, spec.dimension)
        with np.errstate(over="ignore"):
            self.m = spec.m(self.nodes)
        if not np.all(np.isfinite(self.m)):
            raise EvaluationError("conformal factor overflowed on the grid")
        self.graph = self._build_edges()

    @property
    def n(self) -> int:
        return len(self.nodes)

    def _build_edges(self):
        d = len(self.shape)
        idx = np.arange(self.n).reshape(self.shape)
        m = self.m.reshape(self.shape)
        rows, cols, wts = [], [], []
        for k in itertools.product((-1, 0, 1), repeat=d):
            if k <= (0,) * d:
                continue
            a = tuple(slice(max(0, -ki), self.shape[i] - max(0, ki)) for i, ki in enumerate(k))
            b = tuple(slice(max(0, ki), self.shape[i] - max(0, -ki)) for i, ki in enumerate(k))
            length = float(np.linalg.norm(np.array(k) * self.steps))
            rows.append(idx[a].ravel())
            cols.append(idx[b].ravel())
            wts.append((0.5 * (m[a] + m[b]) * length).ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        wts = np.concatenate(wts)
        g = sparse.coo_matrix((wts, (rows, cols)), shape=(self.n, self.n)).tocsr()
        return g

    @property
    def max_edge_length(self) -> float:
        return float(self.graph.data.max())

    def nearest_node(self, x) -> int:
        x = np.asarray(x, dtype=float).reshape(-1)
        if not self.box.contains(x)[0]:
            raise InputError(f"point {x} outside the grid box")
        ijk = [int(round((xi - lo) / s)) for xi, lo, s in zip(x, self.box.lo, self.steps)]
        return int(np.ravel_multi_index(ijk, self.shape))

    def distances_from(self, sources, limit: float = np.inf) -> np.ndarray:
        sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
        return dijkstra(self.graph, directed=False, indices=sources, limit=limit)

    def all_pairs(self) -> np.ndarray:
        return dijkstra(self.graph, directed=False)


def _segment_length(spec: WeightSpec, x, y, n: int = 2048) -> float:
    """Midpoint-rule value of ``int_0^1 m(x + t(y-x)) |y-x| dt``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    t = (np.arange(n) + 0.5) / n
    pts = x[None, :] + t[:, None] * (y - x)[None, :]
    return float(np.mean(spec.m(pts)) * np.linalg.norm(y - x))


def geodesic_distance(spec: WeightSpec, x, y, resolution: float, box=None, graph: GridGraph | None = None):
    """Grid estimate of ``rho_phi(x, y)`` with bracketing bounds.

    Returns ``(estimate, lower, upper)``.  ``upper`` is the length of the
    straight segment (always an upper bound for the geodesic distance);
    ``lower`` combines ``rho >= |x-y|`` with the graph distance corrected
    for stencil anisotropy and snapping/quadrature error.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if graph is None:
        if box is None:
            lo = np.minimum(x, y) - 2 * resolution
            hi = np.maximum(x, y) + 2 * resolution
            box = Box(tuple(lo), tuple(hi))
        graph = GridGraph(spec, box, resolution)
    i, j = graph.nearest_node(x), graph.nearest_node(y)
    g = float(graph.distances_from(i)[0, j])
    if not np.isfinite(g):
        raise ResolutionError("grid graph does not connect x and y")
    eucl = float(np.linalg.norm(x - y))
    upper = _segment_length(spec, x, y)
    snap = float(np.linalg.norm(graph.nodes[i] - x) + np.linalg.norm(graph.nodes[j] - y))
    m_hi = float(graph.m.max())
    err = (snap + float(np.linalg.norm(graph.steps))) * m_hi
    estimate = min(max(g, eucl), upper)
    lower = min(max(eucl, g / stencil_anisotropy(spec.dimension) - err), estimate)
    return estimate, lower, upper


def metric_equivalence(spec: WeightSpec, box, h: float, R: float, chunk: int = 512) -> dict:
    """Smallest ``C`` with ``C^-1 m(x)|x-y| <= rho(x,y) <= C m(x)|x-y|`` for grid pairs with ``rho < R``."""
    graph = GridGraph(spec, box, h)
    lo_ratio, hi_ratio, pairs = np.inf, 0.0, 0
    for start in range(0, graph.n, chunk):
        src = np.arange(start, min(start + chunk, graph.n))
        D = graph.distances_from(src, limit=R)
        s, t = np.nonzero(np.isfinite(D) & (D > 0) & (D < R))
        if len(s) == 0:
            continue
        src_ids = src[s]
        eu = np.linalg.norm(graph.nodes[src_ids] - graph.nodes[t], axis=1)
        ratio = D[s, t] / (graph.m[src_ids] * eu)
        lo_ratio = min(lo_ratio, float(ratio.min()))
        hi_ratio = max(hi_ratio, float(ratio.max()))
        pairs += len(s)
    C = max(hi_ratio, 1.0 / lo_ratio) if pairs else 1.0
    return {"R": R, "h": h, "pairs": pairs, "min_ratio": lo_ratio, "max_ratio": hi_ratio, "constant": C}


# ---------------------------------------------------------------------------
# quadrature


def weighted_mass(spec: WeightSpec, sign: str | int, region, quadrature_resolution: float) -> float:
    """Midpoint-rule value of ``int_region exp(+-phi) dx`` over a box or ball."""
    s = _sign(sign)
    if not quadrature_resolution > 0:
        raise InputError("quadrature resolution must be positive")
    if isinstance(region, Ball):
        box = region.bounding_box()
        center = np.asarray(region.center, dtype=float)
    else:
        box = Box.coerce(region, spec.dimension)
        center = None
    counts = [max(1, int(math.ceil((hi - lo) / quadrature_resolution))) for lo, hi in zip(box.lo, box.hi)]
    axes = [lo + (np.arange(c) + 0.5) * (hi - lo) / c for lo, hi, c in zip(box.lo, box.hi, counts)]
    cell = float(np.prod([(hi - lo) / c for lo, hi, c in zip(box.lo, box.hi, counts)]))
    total = 0.0
    # sweep the first axis in slabs to bound memory
    for x0 in np.array_split(axes[0], max(1, len(axes[0]) // 256)):
        mesh = np.stack(np.meshgrid(x0, *axes[1:], indexing="ij"), axis=-1).reshape(-1, spec.dimension)
        if center is not None:
            mesh = mesh[np.linalg.norm(mesh - center, axis=1) <= region.radius]
        if len(mesh):
            with np.errstate(over="ignore"):
                total += float(np.sum(np.exp(s * spec.value(mesh))))
    return total * cell


def _sign(sign) -> int:
    if sign in ("+", 1, "plus", "+1"):
        return 1
    if sign in ("-", -1, "minus", "-1"):
        return -1
    raise InputError(f"sign must be '+' or '-', got {sign!r}")


# ---------------------------------------------------------------------------
# integral lemmas


def _midpoint(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, n: int) -> float:
    if b <= a:
        return 0.0
    t = a + (np.arange(n) + 0.5) * (b - a) / n
    return float(np.sum(f(t)) * (b - a) / n)


def verify_integral_lemma(
    psi: Callable,
    h: Callable,
    d: int,
    direction: str,
    tau_grid,
    a_grid,
    T: float = 0.0,
    n_quad: int = 20_000,
) -> float:
    """Best constant ``C`` in the one-dimensional layer-mass lemmas.

    ``lower-tail``: ``int_tau^{tau+a h} e^psi r^{d-1} >= C a int_0^{tau+a h} e^psi r^{d-1}``.
    ``upper-tail``: ``int_{tau-a h}^tau e^-psi r^{d-1} >= C a int_{tau-a h}^inf e^-psi r^{d-1}``
    for ``tau >= T``.  Returns the infimum over the grid of
    ``LHS / (a RHS)``; points with ``a = 0`` are skipped.  Integrands are
    rescaled by their value at the moving endpoint so that large ``psi``
    does not overflow.
    """
    if int(d) < 1:
        raise InputError("d must be >= 1")
    taus = np.asarray(tau_grid, dtype=float).ravel()
    As = np.asarray(a_grid, dtype=float).ravel()
    As = As[As > 0]
    if direction == "upper-tail":
        taus = taus[taus >= T]
    if taus.size == 0 or As.size == 0:
        raise InputError("empty tau or a grid")
    if np.any(As > 1):
        raise InputError("a must lie in [0, 1]")
    p = lambda r: np.asarray(psi(r), dtype=float)  # noqa: E731
    best = np.inf
    for tau in taus:
        for a in As:
            width = a * float(h(tau))
            if direction == "lower-tail":
                top = tau + width
                ref = float(p(np.array([top]))[0])

                def g(r):
                    return np.exp(p(r) - ref) * r ** (d - 1)

                lhs = _midpoint(g, tau, top, n_quad)
                rhs = _midpoint(g, 0.0, top, n_quad)
            elif direction == "upper-tail":
                bottom = tau - width
                if bottom < 0:
                    raise InputError("tau - a h(tau) must be nonnegative; raise T")
                ref = float(p(np.array([bottom]))[0])

                def g(r):
                    return np.exp(ref - p(r)) * r ** (d - 1)

                lhs = _midpoint(g, bottom, tau, n_quad)
                # truncate the infinite tail once the integrand has decayed by e^-50
                end = tau + max(width, 1.0)
                while g(np.array([end]))[0] > 1e-22 * max(g(np.array([tau]))[0], 1e-300):
                    end = tau + 2 * (end - tau)
                    if end - tau > 1e6:
                        raise EvaluationError("upper-tail integrand does not decay")
                rhs = lhs + _midpoint(g, tau, end, n_quad)
            else:
                raise InputError("direction must be 'lower-tail' or 'upper-tail'")
            if not (np.isfinite(lhs) and np.isfinite(rhs)) or rhs <= 0:
                raise EvaluationError(f"quadrature failed at tau={tau}, a={a}")
            best = min(best, lhs / (a * rhs))
    return float(best)

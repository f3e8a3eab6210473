"""Hormander-type kernel constants and the H1 to L1 bound on atoms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .space import FiniteMetricMeasureSpace

__all__ = [
    "KernelConstants",
    "kernel_matrix",
    "toy_kernel",
    "hormander_constant",
    "hormander_constants",
    "operator_norm_l2",
    "AtomImageReport",
    "atom_image_check",
]


def kernel_matrix(space: FiniteMetricMeasureSpace, kernel) -> np.ndarray:
    """Evaluate ``kernel(x, y)`` off the diagonal; the diagonal is set to zero.

    ``kernel`` is an ``(n, n)`` array or a callable ``kernel(i, j)`` taking
    index arrays (broadcast as a full grid).
    """
    if callable(kernel):
        i, j = np.meshgrid(np.arange(space.n), np.arange(space.n), indexing="ij")
        K = np.array(kernel(i, j), dtype=float)
    else:
        K = np.array(kernel, dtype=float)
    if K.shape != (space.n, space.n):
        raise InputError("kernel matrix has the wrong shape")
    np.fill_diagonal(K, 0.0)
    if not np.all(np.isfinite(K)):
        raise InputError("kernel is not finite off the diagonal")
    return K


def toy_kernel(space: FiniteMetricMeasureSpace) -> np.ndarray:
    """``k(x, y) = e^{-rho(x,y)} / mu(B(x, rho(x,y)))``."""
    D = space.rows(np.arange(space.n))
    order = np.argsort(D, axis=1, kind="stable")
    ds = np.take_along_axis(D, order, axis=1)
    cum = np.cumsum(space.mass[order], axis=1)
    # closed ball mass: cumulative mass at the end of each tie group
    is_end = np.concatenate([ds[:, 1:] != ds[:, :-1], np.ones((space.n, 1), bool)], axis=1)
    ball = np.flip(np.minimum.accumulate(np.flip(np.where(is_end, cum, np.inf), axis=1), axis=1), axis=1)
    vol = np.empty_like(D)
    np.put_along_axis(vol, order, ball, axis=1)
    return kernel_matrix(space, np.exp(-D) / vol)


def hormander_constant(space: FiniteMetricMeasureSpace, K: np.ndarray, b: float) -> tuple[float, tuple]:
    """``sup_B sup_{x,x' in B} sum_{y notin 2B} |K[x,y] - K[x',y]| mu(y)`` over closed balls of radius ``<= b``.

    For a fixed pair the integral only shrinks as the ball grows, so each
    pair is evaluated at the smallest ball of each centre containing both.
    Returns the constant and a witness ``(centre, radius, x, x')``.
    """
    best, wit = 0.0, (0, 0.0, 0, 0)
    w = space.mass
    for c in range(space.n):
        row = space.row(c)
        order = np.argsort(row, kind="stable")
        d = row[order]
        K_in = int(np.searchsorted(d, b, side="right"))
        last = np.flatnonzero(np.append(d[1:K_in] != d[: K_in - 1], True))
        start = 0
        for e in last:
            new = order[start : e + 1]
            prev = order[: e + 1]
            r = d[e]
            outside = order[np.searchsorted(d, 2 * r, side="right") :]
            start = e + 1
            if outside.size == 0 or prev.size < 2:
                continue
            A = K[np.ix_(new, outside)]
            Bm = K[np.ix_(prev, outside)]
            vals = np.abs(A[:, None, :] - Bm[None, :, :]) @ w[outside]
            k = np.unravel_index(int(np.argmax(vals)), vals.shape)
            if vals[k] > best:
                best, wit = float(vals[k]), (c, float(r), int(new[k[0]]), int(prev[k[1]]))
    return best, wit


@dataclass(frozen=True)
class KernelConstants:
    upsilon: float
    nu: float
    b: float
    upsilon_witness: tuple
    nu_witness: tuple

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def hormander_constants(space: FiniteMetricMeasureSpace, kernel, b: float) -> KernelConstants:
    """``upsilon_k`` (difference in the first variable) and ``nu_k`` (in the second)."""
    K = kernel_matrix(space, kernel)
    up, wu = hormander_constant(space, K, b)
    nu, wn = hormander_constant(space, np.ascontiguousarray(K.T), b)
    return KernelConstants(up, nu, float(b), wu, wn)


def operator_norm_l2(space: FiniteMetricMeasureSpace, K: np.ndarray, iters: int = 500, tol: float = 1e-12, seed: int = 0) -> float:
    """``||T||_{L^2(mu)}`` for ``Tf(x) = sum_y K[x,y] f(y) mu(y)`` by power iteration on ``A^T A``."""
    s = np.sqrt(space.mass)
    A = s[:, None] * K * s[None, :]
    v = np.random.default_rng(seed).standard_normal(space.n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        u = A.T @ (A @ v)
        nrm = float(np.linalg.norm(u))
        if nrm == 0:
            return 0.0
        v = u / nrm
        if abs(nrm - lam) <= tol * nrm:
            lam = nrm
            break
        lam = nrm
    return float(np.sqrt(lam))


@dataclass(frozen=True)
class AtomImageReport:
    nu: float
    T_norm: float
    images: tuple[float, ...]
    C: float

    def to_dict(self) -> dict:
        return {"nu": self.nu, "T_norm": self.T_norm, "images": list(self.images), "C": self.C}


def atom_image_check(space: FiniteMetricMeasureSpace, kernel, atoms, nu: float, T_norm: float | None = None) -> AtomImageReport:
    """Measure the single constant ``C = max ||T a||_1 / (nu_k + ||T||_2)`` over the atoms."""
    K = kernel_matrix(space, kernel)
    T2 = operator_norm_l2(space, K) if T_norm is None else T_norm
    imgs = []
    for a in atoms:
        vals = a.values if hasattr(a, "values") else np.asarray(a, dtype=float)
        Ta = K @ (vals * space.mass)
        imgs.append(float(np.sum(np.abs(Ta) * space.mass)))
    denom = nu + T2
    C = max(imgs) / denom if imgs and denom > 0 else 0.0
    return AtomImageReport(float(nu), float(T2), tuple(imgs), float(C))

"""Geometry of the open subprobability simplex and the explicit barrier ``w``.

Points are d-vectors ``x`` with ``x_i > 0`` and ``sum(x) < 1``; the implicit
coordinate ``1 - sum(x)`` is the probability of player 0. All functions accept
a single point of shape ``(d,)`` or a batch of shape ``(n, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_DOM = 1e-12


class SimplexDomainError(ValueError):
    """Raised when a point is not in the open simplex."""


@dataclass(frozen=True)
class SimplexPoint:
    coords: np.ndarray
    tol: float = EPS_DOM

    def __post_init__(self):
        c = np.array(self.coords, dtype=float).reshape(-1)
        if c.size < 1:
            raise ValueError("dimension must be >= 1")
        if not contains(c, self.tol):
            raise SimplexDomainError(f"{c} is not interior (tol={self.tol})")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.coords.size

    @property
    def slack(self) -> float:
        return 1.0 - float(self.coords.sum())

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


@dataclass(frozen=True)
class SublevelSpec:
    """The sublevel domain ``{x : w(x) < level}``."""

    level: float

    def infimum(self, d: int) -> float:
        return 2.0 * (d + 1) * np.log(d + 1)

    def is_empty(self, d: int) -> bool:
        return self.level <= self.infimum(d)


def _as_points(x, d: int | None = None) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim > 2:
        raise ValueError(f"expected shape (d,) or (n, d), got {a.shape}")
    if d is not None and a.shape[-1] != d:
        raise ValueError(f"dimension mismatch: expected d={d}, got {a.shape[-1]}")
    return a


def contains(x, tol: float = 0.0, d: int | None = None):
    """True iff ``min_i x_i > tol`` and ``sum(x) < 1 - tol`` (vectorised over rows)."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    a = _as_points(x, d)
    if a.shape[-1] < 1:
        raise ValueError("dimension must be >= 1")
    ok = (a.min(axis=-1) > tol) & (a.sum(axis=-1) < 1.0 - tol)
    return bool(ok) if a.ndim == 1 else ok


def _checked(x, tol: float = 0.0) -> np.ndarray:
    a = _as_points(x)
    if not np.all(contains(a, tol)):
        raise SimplexDomainError("point(s) outside the open simplex")
    return a


def slack(x) -> np.ndarray:
    a = _as_points(x)
    return 1.0 - a.sum(axis=-1)


def barrier_w(x) -> float | np.ndarray:
    """``-2 sum log x_i - 2 log(1 - sum x_i)``; raises on non-interior input."""
    a = _checked(x)
    out = -2.0 * np.log(a).sum(axis=-1) - 2.0 * np.log(1.0 - a.sum(axis=-1))
    return float(out) if a.ndim == 1 else out


def barrier_w_unchecked(a: np.ndarray) -> np.ndarray:
    # +inf outside the simplex instead of raising; used by hot loops
    with np.errstate(divide="ignore", invalid="ignore"):
        s = 1.0 - a.sum(axis=-1)
        out = -2.0 * np.log(a).sum(axis=-1) - 2.0 * np.log(s)
    bad = (a.min(axis=-1) <= 0) | (s <= 0)
    return np.where(bad, np.inf, out)


def barrier_grad(x) -> np.ndarray:
    a = _checked(x)
    s = 1.0 - a.sum(axis=-1, keepdims=True)
    return -2.0 / a + 2.0 / s


def barrier_hess(x) -> np.ndarray:
    """``Diag(2/x_i^2) + 2/(1 - sum x)^2 * ones``."""
    a = _checked(x)
    d = a.shape[-1]
    s = 1.0 - a.sum(axis=-1)
    diag = 2.0 / a**2
    out = np.broadcast_to((2.0 / s**2)[..., None, None], a.shape[:-1] + (d, d)).copy()
    idx = np.arange(d)
    out[..., idx, idx] += diag
    return out


def barrier_cov(a: np.ndarray) -> np.ndarray:
    """Inverse of :func:`barrier_hess` via Sherman-Morrison, stable near the boundary.

    ``H^{-1} = 1/2 (Diag(x^2) - x^2 (x^2)^T / (s^2 + |x|^2))`` with ``x^2`` elementwise.
    """
    a = np.asarray(a, dtype=float)
    q = a**2
    s = 1.0 - a.sum(axis=-1)
    denom = s**2 + q.sum(axis=-1)
    out = -0.5 * q[..., :, None] * q[..., None, :] / denom[..., None, None]
    d = a.shape[-1]
    idx = np.arange(d)
    # diagonal written as x_i^2 (denom - x_i^2) / denom to avoid cancellation
    out[..., idx, idx] = 0.5 * q * (denom[..., None] - q) / denom[..., None]
    return out


def barrier_cov_logdet(a: np.ndarray) -> np.ndarray:
    """``log det`` of :func:`barrier_cov` in closed form: ``-w - d log 2 - log(ratio)``."""
    a = np.asarray(a, dtype=float)
    d = a.shape[-1]
    return -barrier_w_unchecked(a) - d * np.log(2.0) - np.log(_ratio(a))


def _ratio(a: np.ndarray) -> np.ndarray:
    s = 1.0 - a.sum(axis=-1)
    return (a**2).sum(axis=-1) + s**2


def barrier_det_ratio(x) -> float | np.ndarray:
    """``det(hess(w)/2) / exp(w)`` via the closed form ``sum x_i^2 + (1 - sum x)^2``."""
    a = _checked(x)
    out = _ratio(a)
    return float(out) if a.ndim == 1 else out


def barrier_det_ratio_direct(x) -> float | np.ndarray:
    """Same ratio computed by dense linear algebra; cross-check for the closed form.

    The ratio does not depend on which vertex sits at the origin, so the
    Hessian is formed in the chart that drops the largest barycentric
    coordinate. Otherwise a tiny slack makes the rank-one term swamp the
    diagonal and elimination loses about ``1/slack^2`` in relative accuracy.
    """
    a = np.atleast_2d(_checked(x))
    bary = np.column_stack([1.0 - a.sum(axis=-1), a])
    drop = np.argmax(bary, axis=-1)
    keep = np.ones(bary.shape, dtype=bool)
    keep[np.arange(bary.shape[0]), drop] = False
    chart = bary[keep].reshape(a.shape)
    sign, logdet = np.linalg.slogdet(0.5 * barrier_hess(chart))
    if np.any(sign <= 0):
        raise ArithmeticError("barrier Hessian not positive definite")
    w = -2.0 * np.log(bary).sum(axis=-1)
    out = np.exp(logdet - w)
    return float(out[0]) if np.ndim(x) == 1 else out


def vertex_swap(x, i: int) -> np.ndarray:
    """Replace coordinate ``i`` (1-based) by the slack ``1 - sum(x)``.

    This is the linear involution of the simplex that exchanges vertex ``e_i``
    with ``e_0 = 0``.
    """
    a = _checked(x)
    d = a.shape[-1]
    if not 1 <= i <= d:
        raise IndexError(f"index {i} out of range 1..{d}")
    out = a.copy()
    out[..., i - 1] = 1.0 - a.sum(axis=-1)
    return out


def sublevel_contains(spec: SublevelSpec, x) -> bool | np.ndarray:
    w = barrier_w(x)
    return w < spec.level


def vertices(d: int) -> np.ndarray:
    """Rows ``e_0 = 0, e_1, ..., e_d``."""
    return np.vstack([np.zeros(d), np.eye(d)])


def nearest_vertex(x) -> tuple[np.ndarray, np.ndarray]:
    """Index (0..d) and Euclidean distance of the nearest vertex; ties go to the lowest index."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    v = vertices(a.shape[-1])
    dist = np.linalg.norm(a[:, None, :] - v[None, :, :], axis=-1)
    idx = np.argmin(dist, axis=1)
    return idx, dist[np.arange(a.shape[0]), idx]

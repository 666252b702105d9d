"""Value function of the control problem and related closed-form quantities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simplex import SimplexPoint, _as_points, contains
from .solver import ExtrapolationError


@dataclass(frozen=True)
class ValueQuery:
    t: float
    x: SimplexPoint

    def __post_init__(self):
        if not 0.0 <= self.t < 1.0:
            raise ValueError(f"t must lie in [0, 1), got {self.t}")
        if not isinstance(self.x, SimplexPoint):
            object.__setattr__(self, "x", SimplexPoint(self.x))


def time_term(t, d: int):
    """``f(t) = d (1 - t) log(1 - t)``, with ``f(1) = 0``."""
    t = np.asarray(t, dtype=float)
    r = 1.0 - t
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0, d * r * np.log(np.where(r > 0, r, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def _g(field, x):
    g, _, _, ok = field.eval_many(np.atleast_2d(x))
    if not np.all(ok):
        raise ExtrapolationError("query outside the solved region")
    return g


def value(q: ValueQuery | float, field, x=None) -> float:
    """``v(t, x) = (1 - t) g(x) + d (1 - t) log(1 - t)``.

    Accepts either a :class:`ValueQuery` or ``value(t, field, x)``.
    """
    if isinstance(q, ValueQuery):
        t, pt = q.t, q.x.coords
    else:
        q = ValueQuery(float(q), SimplexPoint(x))
        t, pt = q.t, q.x.coords
    d = pt.size
    g = float(_g(field, pt)[0])
    return (1.0 - t) * g + time_term(t, d)


def value_many(t, field, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), X.shape[:1])
    if np.any((t < 0) | (t >= 1)):
        raise ValueError("t must lie in [0, 1)")
    return (1.0 - t) * _g(field, X) + time_term(t, X.shape[1])


def scaling_identity_gap(t: float, s: float, x, field) -> float:
    """``|v(s,x)/(1-s) - d log(1-s) - v(t,x)/(1-t) + d log(1-t)|``."""
    for name, val in (("t", t), ("s", s)):
        if not 0.0 <= val < 1.0:
            raise ValueError(f"{name} must lie in [0, 1)")
    pt = SimplexPoint(x)
    d = pt.dim
    lhs = value(ValueQuery(s, pt), field) / (1.0 - s) - d * np.log1p(-s)
    rhs = value(ValueQuery(t, pt), field) / (1.0 - t) - d * np.log1p(-t)
    return abs(lhs - rhs)


def covariance_budget(x) -> np.ndarray:
    """``Diag(x) - x x^T``; batched over leading axes."""
    a = _as_points(x)
    out = -a[..., :, None] * a[..., None, :]
    idx = np.arange(a.shape[-1])
    out[..., idx, idx] += a
    return out


def budget_logdet(x) -> float | np.ndarray:
    """``log det(Diag(x) - x x^T)`` by Cholesky; ``-inf`` where the factorization fails."""
    a = _as_points(x)
    d = a.shape[-1]
    B = covariance_budget(a).reshape(-1, d, d)
    out = np.empty(B.shape[0])
    for k, m in enumerate(B):
        try:
            L = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            out[k] = -np.inf
            continue
        diag = np.diag(L)
        out[k] = 2.0 * np.log(diag).sum() if np.all(diag > 0) else -np.inf
    return float(out[0]) if a.ndim == 1 else out


def lower_bound(t: float, x) -> float:
    """``d (1-t) log(1-t) - (1-t) log det(Diag(x) - x x^T)``; ``+inf`` on the boundary."""
    if not 0.0 <= t < 1.0:
        raise ValueError("t must lie in [0, 1)")
    a = np.asarray(x, dtype=float).reshape(-1)
    if not contains(a):
        return np.inf
    ld = budget_logdet(a)
    if not np.isfinite(ld):
        return np.inf
    return time_term(t, a.size) - (1.0 - t) * ld

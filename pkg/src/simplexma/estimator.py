"""scikit-learn style front end for the solver."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .simplex import EPS_DOM
from .solver import ExtrapolationError, SolveConfig, solve_nested
from .value import value_many


def check_simplex_points(X, dim: int | None = None) -> np.ndarray:
    """Validate a batch of points of the open simplex; returns a float array of shape (n, d)."""
    X = check_array(X, dtype=np.float64, ensure_2d=False)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if dim in (None, 1) else X.reshape(1, -1)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {X.shape[1]}")
    inside = np.all(X > EPS_DOM, axis=1) & (X.sum(axis=1) < 1.0 - EPS_DOM)
    if not np.all(inside):
        bad = np.flatnonzero(~inside)[:5]
        raise ValueError(f"points {bad.tolist()} are not in the open simplex")
    return X


class MongeAmpereSolver(BaseEstimator):
    """Solve ``g = log det(Hess g / 2)`` on the simplex and evaluate the result.

    There is no training data: :meth:`fit` runs the nested Dirichlet solve.
    ``X`` is accepted so the object fits in pipelines; if given, it must lie
    in the solved region after fitting.
    """

    def __init__(self, dim=1, levels=(6.0, 8.0, 10.0), h=1e-3, tol_res=1e-8, max_iter=200, dirichlet="corrected"):
        self.dim = dim
        self.levels = levels
        self.h = h
        self.tol_res = tol_res
        self.max_iter = max_iter
        self.dirichlet = dirichlet

    def fit(self, X=None, y=None):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        cfg = SolveConfig(levels=self.levels, h=self.h, tol_res=self.tol_res, max_iter=self.max_iter,
                          dirichlet=self.dirichlet)
        self.field_, self.report_ = solve_nested(self.dim, cfg)
        self.level_ = self.field_.level
        self.n_features_in_ = self.dim
        if X is not None:
            self._covered(check_simplex_points(X, self.dim))
        return self

    def _covered(self, X):
        ok = self.field_.contains(X)
        if not np.all(ok):
            raise ExtrapolationError(f"{int((~ok).sum())} points outside the solved region")
        return X

    def _points(self, X):
        check_is_fitted(self, "field_")
        return self._covered(check_simplex_points(X, self.dim))

    def predict(self, X):
        """``g`` at the points."""
        X = self._points(X)
        return self.field_.eval_many(X, what="g")[0]

    def gradient(self, X):
        X = self._points(X)
        return self.field_.eval_many(X, what="h")[1]

    def hessian(self, X):
        X = self._points(X)
        return self.field_.eval_many(X, what="H")[2]

    def value(self, t, X):
        """Value function ``v(t, x)``."""
        X = self._points(X)
        return value_many(t, self.field_, X)

"""Statistical and analytical checks on solved fields and simulated paths.

Every check returns a :class:`McEntry`. Statistical checks compare a Monte
Carlo mean against its target at ``k`` standard errors (3 by default); when a
check has several components, the entry reports the worst one and keeps the
rest in ``details``.
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .simplex import SimplexPoint, barrier_w
from .solver import ExactField1D, ExtrapolationError
from .value import covariance_budget, value

PASS, FAIL, INSUFFICIENT, INFO = "pass", "fail", "insufficient", "info"


class InsufficientDataError(ValueError):
    pass


@dataclass
class McEntry:
    name: str
    statistic: float
    se: float | None
    threshold: float | None
    status: str
    n: int = 0
    details: dict = dc_field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def record(self) -> list[tuple[str, str]]:
        def fmt(v):
            if v is None:
                return "na"
            if isinstance(v, (bool, np.bool_)):
                return str(bool(v)).lower()
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            if isinstance(v, (float, np.floating)):
                return f"{float(v):.9g}"
            if isinstance(v, (list, tuple, np.ndarray)):
                return "[" + ",".join(fmt(x) for x in np.asarray(v, dtype=object).ravel()) + "]"
            return str(v)

        out = [("test", self.name), ("status", self.status), ("statistic", fmt(self.statistic)),
               ("se", fmt(self.se)), ("threshold", fmt(self.threshold)), ("n", fmt(self.n))]
        taken = {k for k, _ in out}
        clash = taken & set(self.details)
        if clash:
            raise ValueError(f"details keys {sorted(clash)} shadow record fields")
        out += [(k, fmt(v)) for k, v in self.details.items()]
        return out


@dataclass
class McReport:
    entries: list[McEntry] = dc_field(default_factory=list)
    seed: int | None = None
    config: dict = dc_field(default_factory=dict)

    def add(self, entry: McEntry) -> McEntry:
        self.entries.append(entry)
        return entry

    @property
    def ok(self) -> bool:
        """True iff every non-informational entry passed."""
        return all(e.passed for e in self.entries if e.status != INFO)

    def __getitem__(self, name: str) -> McEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"seed={self.seed if self.seed is not None else 'na'}\n")
        buf.write(f"config={json.dumps(self.config, sort_keys=True, default=str)}\n")
        for e in self.entries:
            buf.write("\n")
            for k, v in e.record():
                buf.write(f"{k}={v}\n")
        return buf.getvalue()

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("test,status,statistic,se,threshold,n\n")
        for e in self.entries:
            rec = dict(e.record())
            buf.write(",".join(rec[k] for k in ("test", "status", "statistic", "se", "threshold", "n")) + "\n")
        return buf.getvalue()


def _mean_se(a: np.ndarray):
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n < 2:
        return a.mean(axis=0) if n else np.nan, np.nan
    return a.mean(axis=0), a.std(axis=0, ddof=1) / np.sqrt(n)


def _worst(dev, se, allowance, k):
    """Index of the component using the largest share of its allowed deviation."""
    dev = np.atleast_1d(dev)
    se = np.atleast_1d(se)
    thr = k * se + allowance
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(thr > 0, np.abs(dev) / thr, np.where(np.abs(dev) > 0, np.inf, 0.0))
    return int(np.argmax(np.nan_to_num(ratio, nan=np.inf))), thr


# ---------------------------------------------------------------------------
# path tests

def terminal_distribution_test(ens, x0=None, k: float = 3.0, min_paths: int = 10_000) -> McEntry:
    """Vertex frequencies of non-censored paths against ``(1 - sum x0, x0)``."""
    x = np.asarray(ens.x0 if x0 is None else x0, dtype=float).reshape(-1)
    lab = np.asarray(ens.label)
    kept = lab[lab >= 0]
    n = kept.size
    if n < min_paths:
        raise InsufficientDataError(f"{n} non-censored paths, need at least {min_paths}")
    p = np.concatenate([[1.0 - x.sum()], x])
    freq = np.bincount(kept, minlength=p.size)[: p.size] / n
    se = np.sqrt(p * (1.0 - p) / n)
    dev = freq - p
    i, thr = _worst(dev, se, 0.0, k)
    ok = bool(np.all(np.abs(dev) <= thr))
    return McEntry("terminal_distribution", float(dev[i]), float(se[i]), float(thr[i]), PASS if ok else FAIL, n,
                   {"expected": p, "frequency": freq, "z": np.divide(dev, se, out=np.zeros_like(dev), where=se > 0)})


def censoring_test(ens, ceiling: float = 0.02) -> McEntry:
    frac = float(np.mean(np.asarray(ens.label) < 0))
    return McEntry("censoring", frac, None, ceiling, PASS if frac <= ceiling else FAIL, int(np.size(ens.label)),
                   {"g_stop": ens.g_stop, "U_max": ens.config.U_max, "r_snap": ens.config.r_snap})


def _logdet_increments(paths, field, test_times):
    """``[-d log(1-t) - g(M_t)] - [-g(x0)]`` per path and test time."""
    if hasattr(paths, "L"):
        if paths.kind != "aldous" or paths.L is None:
            raise ValueError("the log det martingale test applies to optimal (Aldous) paths only")
        x0 = paths.x0
        g0 = float(field.eval_many(x0[None, :], what="g")[0][0])
        times = np.asarray(paths.test_times)
        sel = [int(np.flatnonzero(np.isclose(times, t))[0]) for t in test_times]
        return paths.L[:, sel] + g0
    paths = list(paths)
    if not paths:
        raise InsufficientDataError("no paths")
    if any(p.kind != "aldous" for p in paths):
        raise ValueError("the log det martingale test applies to optimal (Aldous) paths only")
    x0 = paths[0].Y[0]
    d = x0.size
    g0 = float(field.eval_many(x0[None, :], what="g")[0][0])
    out = np.empty((len(paths), len(test_times)))
    for r, p in enumerate(paths):
        t = p.t
        for c, s in enumerate(test_times):
            # state at the last grid time not after s; stopped paths keep their final state
            kk = max(int(np.searchsorted(t, s, side="right")) - 1, 0)
            y = p.Y[kk]
            g = field.eval_many(y[None, :], what="g")[0][0]
            out[r, c] = -d * np.log1p(-s) - g + g0
    return out


def logdet_martingale_test(paths, field, test_times: Sequence[float] = (0.25, 0.5, 0.75, 0.9),
                           k: float = 3.0) -> McEntry:
    """No drift in ``log det Sigma*(t, M_t) = -d log(1-t) - g(M_t)``.

    ``paths`` is an :class:`~simplexma.sim.Ensemble` or a sequence of
    recorded :class:`~simplexma.sim.PathSample`.
    """
    inc = _logdet_increments(paths, field, list(test_times))
    n = inc.shape[0]
    if n < 2:
        raise InsufficientDataError("need at least two paths")
    mean, se = _mean_se(inc)
    i, thr = _worst(mean, se, 0.0, k)
    ok = bool(np.all(np.abs(mean) <= thr))
    return McEntry("logdet_martingale", float(mean[i]), float(se[i]), float(thr[i]), PASS if ok else FAIL, n,
                   {"times": np.asarray(test_times), "mean": mean, "component_se": se})


def objective_vs_value_test(ens, field, x0=None, allowance: float = 2e-2, k: float = 3.0,
                            target: float | None = None) -> McEntry:
    """MC objective of optimal paths against ``v(0, x0)``."""
    x = np.asarray(ens.x0 if x0 is None else x0, dtype=float).reshape(-1)
    if target is None:
        target = value(0.0, field, x)
    mean, se = _mean_se(ens.objective)
    dev = mean - target
    thr = k * se + allowance
    w = float(barrier_w(x))
    in_sandwich = w - np.log(x.size + 1) <= target <= w
    ok = bool(abs(dev) <= thr and in_sandwich)
    return McEntry("objective_vs_value", float(dev), float(se), float(thr), PASS if ok else FAIL, ens.n,
                   {"mc_mean": mean, "target": target, "sandwich": [w - np.log(x.size + 1), w],
                    "in_sandwich": in_sandwich})


def baseline_gap_test(ens, target: float, k: float = 3.0) -> McEntry:
    """A non-optimal martingale must pay strictly more than the optimal value."""
    mean, se = _mean_se(ens.objective)
    gap = mean - target
    ok = bool(gap > k * se)
    return McEntry("baseline_gap", float(gap), float(se), float(k * se), PASS if ok else FAIL, ens.n,
                   {"kind": ens.kind, "mc_mean": mean, "target": target,
                    "mean_truncation_bound": float(np.mean(ens.trunc_bound))})


def intcov_test(ens, x0=None, k: float = 3.0) -> McEntry:
    """MC mean of the integrated covariance against ``Diag(x0) - x0 x0^T`` (upper triangle)."""
    x = np.asarray(ens.x0 if x0 is None else x0, dtype=float).reshape(-1)
    iu = np.triu_indices(x.size)
    target = covariance_budget(x)[iu]
    mean, se = _mean_se(np.asarray(ens.intcov)[:, iu[0], iu[1]])
    dev = mean - target
    i, thr = _worst(dev, se, 0.0, k)
    ok = bool(np.all(np.abs(dev) <= thr))
    return McEntry(f"intcov_{ens.kind}", float(dev[i]), float(se[i]), float(thr[i]), PASS if ok else FAIL, ens.n,
                   {"target": target, "mean": mean, "component_se": se})


# ---------------------------------------------------------------------------
# field scans

def boundary_hessian_scan(field, face_point=None, radii: Sequence[float] = (0.05, 0.03, 0.02, 0.01, 0.0075, 0.005),
                          band: float = 10.0, exact_tol: float = 0.05) -> McEntry:
    """``x_1^2 (H)_{11}`` along an approach to the facet ``x_1 = 0``.

    ``face_point`` fixes the remaining coordinates (d >= 2). Passes iff the
    values stay in a band with max/min <= ``band`` and a positive floor; in
    d = 1 the value at the smallest radius must also be within ``exact_tol``
    (relative) of the limit 2. In d >= 2 the transverse entries
    ``(H)_{jj}``, j >= 2, must stay finite within the same band.
    """
    r = np.asarray(radii, dtype=float)
    d = field.dim
    if d == 1:
        X = r[:, None]
    else:
        fp = np.asarray(face_point, dtype=float).reshape(-1)
        if fp.size != d - 1:
            raise ValueError("face_point must give the d-1 coordinates held fixed")
        X = np.column_stack([r, np.tile(fp, (r.size, 1))])
    _, _, H, ok = field.eval_many(X, what="gH")
    if not np.all(ok):
        bad = r[~ok]
        raise ExtrapolationError(f"radii {bad} leave the solved region; shrink the radii or solve to a higher level")
    q = r**2 * H[:, 0, 0]
    lo, hi = float(q.min()), float(q.max())
    ratio = hi / lo if lo > 0 else np.inf
    good = lo > 0 and ratio <= band
    details = {"radii": r, "x2_H11": q, "band": [lo, hi]}
    stat = ratio
    if d == 1:
        rel = abs(q[np.argmin(r)] - 2.0) / 2.0
        details["limit_rel_error"] = rel
        good = good and rel <= exact_tol
    else:
        trans = np.array([H[:, j, j] for j in range(1, d)]).T
        tlo, thi = float(trans.min()), float(trans.max())
        details["transverse_H"] = trans.ravel()
        details["transverse_band"] = [tlo, thi]
        good = good and np.all(np.isfinite(trans)) and tlo > 0 and thi / tlo <= band
    return McEntry("boundary_hessian_scan", float(stat), None, band, PASS if good else FAIL, r.size, details)


def _margin_nodes(field, margin_steps: int = 2) -> np.ndarray:
    """Interior nodes whose lattice box of half-width ``margin_steps`` is all interior."""
    grid = field.grid
    idx = grid.index[grid.interior]
    rng = range(-margin_steps, margin_steps + 1)
    offs = np.array(np.meshgrid(*([list(rng)] * grid.d), indexing="ij")).reshape(grid.d, -1).T
    keep = np.ones(idx.shape[0], dtype=bool)
    for o in offs:
        nb = grid.lookup(idx + o)
        inside = nb >= 0
        inside[inside] = grid.interior[nb[inside]]
        keep &= inside
    return keep


def gradient_form_sup(field, margin_steps: int = 2) -> float:
    """``sup grad g^T H^{-1} grad g`` over nodes at least ``margin_steps`` steps inside."""
    if isinstance(field, ExactField1D):
        raise TypeError("the gradient form scan needs a solved grid field")
    _, grad, hess = field.node_derivatives()
    keep = _margin_nodes(field, margin_steps)
    grad, hess = grad[keep], hess[keep]
    if grad.shape[0] == 0:
        raise InsufficientDataError("no nodes satisfy the margin")
    q = np.einsum("ni,ni->n", grad, np.linalg.solve(hess, grad[..., None])[..., 0])
    return float(q.max())


def gradient_form_scan(field, refined=None, expected: float | None = None, rel_tol: float = 0.05,
                       max_change: float = 2.0) -> McEntry:
    """Finite supremum of ``grad g^T H^{-1} grad g``.

    With ``refined`` (the same problem on a finer grid) the two suprema must
    differ by less than a factor ``max_change``; with ``expected`` the
    refined (or only) supremum must match it to ``rel_tol``.
    """
    s0 = gradient_form_sup(field)
    details = {"sup": s0}
    good = bool(np.isfinite(s0))
    stat = s0
    if refined is not None:
        s1 = gradient_form_sup(refined)
        change = max(s0, s1) / min(s0, s1) if min(s0, s1) > 0 else np.inf
        details.update(sup_refined=s1, change=change)
        good = good and np.isfinite(s1) and change < max_change
        stat = s1
    if expected is not None:
        rel = abs(stat - expected) / abs(expected)
        details.update(expected=expected, rel_error=rel)
        good = good and rel <= rel_tol
    return McEntry("gradient_form_scan", float(stat), None, max_change if refined is not None else None,
                   PASS if good else FAIL, 1 + (refined is not None), details)


# ---------------------------------------------------------------------------
# Langevin coupling

def langevin_coupling_test(field, x0, seed: int, n_paths: int = 2000, horizon: float = 2.0, h: float = 1e-3,
                           remove_drift: bool = False, k: float = 3.0, stop_margin: float = 3.0) -> McEntry:
    """Regress increments of ``X = grad g(Y)`` on ``X du``; the slope should be 1.

    ``Y`` follows ``dY = sqrt(2 H^{-1}) dW`` in its own time ``u``. Paths stop
    (by a stopping rule on the current state) once ``g(Y)`` comes within
    ``stop_margin`` of the solved level. Slopes are per coordinate, fitted
    through the origin with heteroskedasticity-robust (HC0) errors.
    ``remove_drift`` subtracts ``X du`` from every increment, which must make
    the test fail.
    """
    x = SimplexPoint(x0).coords
    d = x.size
    steps = int(round(horizon / h))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    level = getattr(field, "level", np.inf)
    g_cap = level - stop_margin if np.isfinite(level) else 40.0
    Y = np.tile(x, (n_paths, 1))
    alive = np.ones(n_paths, dtype=bool)
    g, X, H, ok = field.eval_many(Y)
    if not np.all(ok):
        raise ExtrapolationError("x0 outside the solved region")
    Saa = np.zeros(d)
    Say = np.zeros(d)
    Sa2y2 = np.zeros(d)
    Sa3y = np.zeros(d)
    Sa4 = np.zeros(d)
    n_inc = 0
    for _ in range(steps):
        alive &= g < g_cap
        if not alive.any():
            break
        rows = np.flatnonzero(alive)
        Hr = H[rows]
        # symmetric square root of 2 H^{-1}
        lam, V = np.linalg.eigh(Hr)
        S = np.einsum("nij,nj,nkj->nik", V, np.sqrt(2.0 / lam), V)
        xi = rng.standard_normal((rows.size, d))
        Yn = Y[rows] + np.sqrt(h) * np.einsum("nij,nj->ni", S, xi)
        gn, Xn, Hn, okn = field.eval_many(Yn)
        # an increment we cannot evaluate ends that path without entering the fit
        alive[rows[~okn]] = False
        rows, Yn, gn, Xn, Hn = rows[okn], Yn[okn], gn[okn], Xn[okn], Hn[okn]
        a = X[rows] * h
        y = Xn - X[rows]
        if remove_drift:
            y = y - a
        Saa += np.sum(a * a, axis=0)
        Say += np.sum(a * y, axis=0)
        Sa2y2 += np.sum(a * a * y * y, axis=0)
        Sa3y += np.sum(a**3 * y, axis=0)
        Sa4 += np.sum(a**4, axis=0)
        n_inc += rows.size
        Y[rows], g[rows], X[rows], H[rows] = Yn, gn, Xn, Hn
    if n_inc == 0 or np.any(Saa <= 0):
        return McEntry("langevin_coupling", np.nan, None, None, INSUFFICIENT, n_inc,
                       {"reason": "no increments (zero horizon or immediate stop)"})
    beta = Say / Saa
    resid2 = Sa2y2 - 2.0 * beta * Sa3y + beta**2 * Sa4
    se = np.sqrt(np.maximum(resid2, 0.0)) / Saa
    dev = beta - 1.0
    i, thr = _worst(dev, se, 0.0, k)
    ok = bool(np.all(np.abs(dev) <= thr))
    return McEntry("langevin_coupling", float(beta[i]), float(se[i]), float(thr[i]), PASS if ok else FAIL, n_inc,
                   {"beta": beta, "component_se": se, "remove_drift": remove_drift, "horizon": horizon, "h": h,
                    "paths": n_paths})


def config_echo(obj) -> dict:
    """JSON-friendly view of a dataclass config."""
    return json.loads(json.dumps(asdict(obj), default=str))

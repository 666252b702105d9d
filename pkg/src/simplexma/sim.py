"""Euler-Maruyama simulation of the optimal win-martingale and two baselines.

Time convention: transformed time ``u`` with ``t = 1 - exp(-u/2)``. In ``u``
the optimal process solves ``dY = sqrt(H^{-1}) dW`` where ``H`` is the Hessian
of ``g``; the original-time covariance rate is ``Sigma* = 2 H^{-1} / (1 - t)``
and ``Sigma* dt = H^{-1} du``.

Two engines produce identical ensembles: a compiled per-path loop (default)
and a reference numpy engine that steps all paths in lockstep. Path ``i`` draws its normals
from its own PCG64 stream seeded by ``SeedSequence(seed, spawn_key=(i,))``,
so a path depends only on ``(seed, i, config)`` and never on which other
paths share the batch.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from typing import Sequence

import numpy as np

from .simplex import EPS_DOM, SimplexPoint, _ratio, barrier_cov, barrier_w_unchecked, contains, nearest_vertex
from .solver import ExactField1D, ExtrapolationError
from .value import covariance_budget, time_term

log = logging.getLogger(__name__)

CENSORED = -1
TEST_TIMES = (0.25, 0.5, 0.75, 0.9)
MAX_BISECT = 20
DEFAULT_ABSORB_RADIUS = 0.02
# baselines have no closed tail, so they run deep enough for a small truncation bound
BASELINE_G_STOP = 36.0


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``g_stop`` and ``trust_level`` default from the field level ``C`` at run
    time: the trust level is ``C - 2``; ``g_stop`` is ``C - 2`` without
    continuation and ``max(C - 2, 12 d)`` with it. ``continuation=None``
    turns continuation on for ``d >= 2``.
    """

    seed: int
    n_paths: int = 1000
    h_u: float = 1e-3
    U_max: float = 40.0
    g_stop: float | None = None
    r_snap: float = 0.1
    scheme: str = "euler"
    continuation: bool | None = None
    trust_level: float | None = None
    test_times: Sequence[float] = TEST_TIMES
    record: Sequence[int] = ()
    block: int = 256
    workers: int = 1
    absorb_radius: float | None = None
    engine: str = "numba"

    def __post_init__(self):
        if self.seed is None or int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if not self.h_u > 0:
            raise ValueError("h_u must be positive")
        if not self.U_max > 0:
            raise ValueError("U_max must be positive")
        if not self.r_snap > 0:
            raise ValueError("r_snap must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.engine not in ("numba", "numpy"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.block < 1:
            raise ValueError("block must be >= 1")
        if self.scheme != "euler":
            raise ValueError("only the 'euler' scheme is implemented")
        if any(not 0 <= s < 1 for s in self.test_times):
            raise ValueError("test times must lie in [0, 1)")
        object.__setattr__(self, "test_times", tuple(float(s) for s in self.test_times))
        object.__setattr__(self, "record", tuple(int(i) for i in self.record))


@dataclass
class PathSample:
    """One recorded path. ``sigma[k]`` is the original-time covariance rate on ``[t_k, t_{k+1})``."""

    kind: str
    u: np.ndarray
    Y: np.ndarray
    sigma: np.ndarray
    label: int
    path_index: int = 0
    trust_index: int | None = None
    tail: float = 0.0

    @property
    def t(self) -> np.ndarray:
        return -np.expm1(-0.5 * self.u)

    @property
    def censored(self) -> bool:
        return self.label == CENSORED

    @property
    def logdet_sigma(self) -> np.ndarray:
        return np.linalg.slogdet(self.sigma)[1]


def objective(path: PathSample) -> float:
    """Left-point rule for ``int -log det Sigma dt`` plus the stored tail.

    For optimal paths the sum runs to ``trust_index`` and ``tail`` is the
    conditional expectation of the remainder.
    """
    t = path.t
    K = len(path.sigma) if path.trust_index is None else path.trust_index
    ld = path.logdet_sigma[:K]
    return float(np.sum(-ld * np.diff(t)[:K]) + path.tail)


def sqrtm_spd(A: np.ndarray) -> np.ndarray:
    """Symmetric square root of a batch of SPD matrices."""
    d = A.shape[-1]
    if d == 1:
        return np.sqrt(A)
    if d == 2:
        det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] ** 2
        s = np.sqrt(np.maximum(det, 0.0))
        tau = np.sqrt(A[:, 0, 0] + A[:, 1, 1] + 2 * s)
        out = A.copy()
        out[:, 0, 0] += s
        out[:, 1, 1] += s
        return out / tau[:, None, None]
    lam, V = np.linalg.eigh(A)
    return np.einsum("kij,kj,klj->kil", V, np.sqrt(np.maximum(lam, 0)), V)


def _inv_logdet(H: np.ndarray):
    d = H.shape[-1]
    if d == 1:
        return 1.0 / H, np.log(H[:, 0, 0])
    if d == 2:
        a, b, c = H[:, 0, 0], H[:, 0, 1], H[:, 1, 1]
        det = a * c - b * b
        inv = np.empty_like(H)
        inv[:, 0, 0] = c / det
        inv[:, 1, 1] = a / det
        inv[:, 0, 1] = inv[:, 1, 0] = -b / det
        return inv, np.log(det)
    sign, ld = np.linalg.slogdet(H)
    return np.linalg.inv(H), np.where(sign > 0, ld, np.nan)


# ---------------------------------------------------------------------------
# models: each returns the u-time covariance rate A, its log det and a
# stopping statistic for a batch of states


class AldousModel:
    kind = "aldous"

    def __init__(self, field, g_stop: float, trust_level: float, continuation: bool, diffusion_scale: float = 1.0):
        self.field = field
        self.dim = field.dim
        self.g_stop = g_stop
        self.trust_level = trust_level
        self.continuation = continuation
        self.scale = diffusion_scale

    def evaluate(self, Y: np.ndarray):
        g, _, H, ok = self.field.eval_many(Y, what="gH")
        A = np.empty((Y.shape[0], self.dim, self.dim))
        ld = np.empty(Y.shape[0])
        stat = np.where(ok, g, np.inf)
        if ok.any():
            A[ok], ld[ok] = _inv_logdet(H[ok])
            A[ok] *= self.scale
            ld[ok] = self.dim * np.log(self.scale) - ld[ok]
        out = ~ok
        if out.any():
            if self.continuation:
                A[out] = self.scale * barrier_cov(Y[out])
                ld[out] = np.linalg.slogdet(A[out])[1]
                stat[out] = barrier_w_unchecked(Y[out])
            else:
                A[out] = np.nan
                ld[out] = np.nan
        trusted = ok & (g < self.trust_level)
        return A, ld, stat, trusted, np.where(ok, g, np.nan)

    def admissible(self, Y: np.ndarray) -> np.ndarray:
        inside = contains(Y, EPS_DOM)
        if not self.continuation:
            inside &= self.field.contains(Y)
        return inside


class Logistic1DModel:
    kind = "logistic1d"
    dim = 1

    def __init__(self, g_stop: float):
        self.g_stop = g_stop

    def evaluate(self, Y: np.ndarray):
        m = Y[:, 0]
        a = (m * (1 - m)) ** 2
        A = a[:, None, None]
        return A, np.log(a), barrier_w_unchecked(Y), np.zeros(len(m), bool), None

    def admissible(self, Y: np.ndarray) -> np.ndarray:
        return contains(Y, EPS_DOM)


class ProductLiftModel:
    """``Y = M (X, 1 - X)`` for independent logistic factors ``M`` and ``X`` (d = 2).

    The simulated state is ``Z = (M, X)``; the covariance is reported for ``Y``.
    """

    kind = "productLift"
    dim = 2

    def __init__(self, g_stop: float):
        self.g_stop = g_stop

    @staticmethod
    def to_y(Z: np.ndarray) -> np.ndarray:
        return np.stack([Z[:, 0] * Z[:, 1], Z[:, 0] * (1 - Z[:, 1])], axis=1)

    @staticmethod
    def to_z(Y: np.ndarray) -> np.ndarray:
        m = Y[:, 0] + Y[:, 1]
        return np.stack([m, Y[:, 0] / m], axis=1)

    def z_cov(self, Z: np.ndarray) -> np.ndarray:
        a = (Z * (1 - Z)) ** 2
        out = np.zeros((Z.shape[0], 2, 2))
        out[:, 0, 0] = a[:, 0]
        out[:, 1, 1] = a[:, 1]
        return out

    def evaluate(self, Z: np.ndarray):
        m, x = Z[:, 0], Z[:, 1]
        aM = (m * (1 - m)) ** 2
        aX = (x * (1 - x)) ** 2
        v = np.stack([x, 1 - x], axis=1)
        e = np.array([1.0, -1.0])
        A = aM[:, None, None] * v[:, :, None] * v[:, None, :] + (m**2 * aX)[:, None, None] * np.outer(e, e)
        # det[v, e] = -1, so det A = aM * m^2 * aX
        ld = np.log(aM) + 2 * np.log(m) + np.log(aX)
        return A, ld, barrier_w_unchecked(self.to_y(Z)), np.zeros(len(m), bool), None

    def admissible(self, Z: np.ndarray) -> np.ndarray:
        return np.all((Z > EPS_DOM) & (Z < 1 - EPS_DOM), axis=1)


# ---------------------------------------------------------------------------
# ensemble


@dataclass
class Ensemble:
    """Per-path summaries of a simulation run (arrays indexed like ``path_index``)."""

    kind: str
    x0: np.ndarray
    config: SimConfig
    path_index: np.ndarray
    label: np.ndarray
    u_stop: np.ndarray
    Y_stop: np.ndarray
    objective: np.ndarray
    trunc_bound: np.ndarray
    intcov: np.ndarray
    L: np.ndarray | None
    test_times: np.ndarray
    g_stop: float
    trust_level: float | None
    paths: dict = dc_field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.label.size

    @property
    def dim(self) -> int:
        return self.x0.size

    @property
    def censored(self) -> np.ndarray:
        return self.label == CENSORED

    def summary_columns(self) -> list[str]:
        d = self.dim
        cols = ["path_index", "label", "u_stop", "objective", "trunc_bound"]
        cols += [f"Y{i + 1}_stop" for i in range(d)]
        cols += [f"C{i + 1}{j + 1}" for i in range(d) for j in range(i, d)]
        if self.L is not None:
            cols += [f"L_t{t:g}" for t in self.test_times]
        return cols

    def summary_rows(self):
        d = self.dim
        iu = np.triu_indices(d)
        for i in range(self.n):
            row = [int(self.path_index[i]), int(self.label[i]), float(self.u_stop[i]),
                   float(self.objective[i]), float(self.trunc_bound[i])]
            row += [float(v) for v in self.Y_stop[i]]
            row += [float(v) for v in self.intcov[i][iu]]
            if self.L is not None:
                row += [float(v) for v in self.L[i]]
            yield row

    @staticmethod
    def concat(parts: list["Ensemble"]) -> "Ensemble":
        parts = sorted(parts, key=lambda e: int(e.path_index[0]) if e.n else 0)
        first = parts[0]
        cat = {k: np.concatenate([getattr(p, k) for p in parts])
               for k in ("path_index", "label", "u_stop", "Y_stop", "objective", "trunc_bound", "intcov")}
        L = None if first.L is None else np.concatenate([p.L for p in parts])
        paths = {}
        for p in parts:
            paths.update(p.paths)
        return replace(first, L=L, paths=paths, **cat)


def _streams(seed: int, indices: np.ndarray):
    return [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(i),)))) for i in indices]


def _label(Y: np.ndarray, r_snap: float) -> np.ndarray:
    idx, dist = nearest_vertex(Y)
    return np.where(dist <= r_snap, idx, CENSORED)


def _run_numpy(model, x0: np.ndarray, cfg: SimConfig, indices: np.ndarray) -> Ensemble:
    """Array engine: all active paths advance together, one step per iteration."""
    d = model.dim
    n = indices.size
    h = cfg.h_u
    sqh = np.sqrt(h)
    aldous = model.kind == "aldous"
    lift = model.kind == "productLift"
    state0 = model.to_z(x0[None, :])[0] if lift else x0

    Z = np.tile(state0, (n, 1))
    active = np.arange(n)
    gens = _streams(cfg.seed, indices)
    B = cfg.block
    buf = np.empty((n, B, d))

    label = np.full(n, CENSORED)
    u_stop = np.zeros(n)
    Y_stop = np.zeros((n, d))
    obj = np.zeros(n)
    trunc = np.zeros(n)
    intcov = np.zeros((n, d, d))
    frozen = np.zeros(n, bool)
    test_u = -2.0 * np.log1p(-np.asarray(cfg.test_times))
    test_k = np.rint(test_u / h).astype(np.int64)
    L = np.full((n, test_k.size), np.nan) if aldous else None
    L_frozen = np.full(n, np.nan)
    # per-path recording
    rec_pos = {int(np.flatnonzero(indices == r)[0]): [] for r in cfg.record if np.any(indices == r)}
    is_rec = np.zeros(n, bool)
    is_rec[list(rec_pos)] = True
    trust_index = {}
    tails = {}

    def freeze(rows, k, Yb, gb):
        # close the optimal-path analytics at state k
        t = -np.expm1(-0.5 * k * h)
        g = np.where(np.isfinite(gb), gb, barrier_w_unchecked(Yb) + np.log(_ratio(Yb)))
        tail = time_term(t, d) + (1 - t) * g
        obj[rows] += tail
        intcov[rows] += covariance_budget(Yb)
        L_frozen[rows] = -d * np.log1p(-t) - g
        frozen[rows] = True
        for r, tl in zip(rows[is_rec[rows]], tail[is_rec[rows]]):
            trust_index[r] = k
            tails[r] = float(tl)

    max_steps = int(np.ceil(cfg.U_max / h))
    absorb_r = _absorb_radius(model, cfg)
    k = 0
    while active.size:
        Zb = Z[active]
        Yb = model.to_y(Zb) if lift else Zb
        A, ldA, stat, trusted, gb = model.evaluate(Zb)
        t_k = -np.expm1(-0.5 * k * h)
        t_next = -np.expm1(-0.5 * (k + 1) * h)
        high = stat >= model.g_stop
        if absorb_r > 0:
            high &= nearest_vertex(Yb)[1] <= absorb_r
        stop = high | (k >= max_steps) | ~np.isfinite(ldA)

        if aldous:
            newly = ~frozen[active] & (~trusted | stop)
            if newly.any():
                freeze(active[newly], k, Yb[newly], gb[newly])
            hit = np.flatnonzero(test_k == k)
            if hit.size:
                live = ~frozen[active]
                for j in hit:
                    L[active[live], j] = -d * np.log1p(-t_k) - gb[live]
        if stop.any():
            rows = active[stop]
            u_stop[rows] = k * h
            Y_stop[rows] = Yb[stop]
            label[rows] = _label(Yb[stop], cfg.r_snap)
            if not aldous:
                integrand = d * np.log1p(-t_k) - d * np.log(2.0) - ldA[stop]
                trunc[rows] = (1 - t_k) * np.abs(np.where(np.isfinite(integrand), integrand, 0.0))
                intcov[rows] += covariance_budget(Yb[stop])
            for r in rows[is_rec[rows]]:
                rec_pos[r].append((k * h, Y_stop[r].copy(), None))
            keep = ~stop
            active, Zb, Yb, A, ldA = active[keep], Zb[keep], Yb[keep], A[keep], ldA[keep]
            if aldous:
                gb = gb[keep]
            if not active.size:
                break

        # integrand of the cost on [t_k, t_{k+1})
        ldS = d * np.log(2.0) - d * np.log1p(-t_k) + ldA
        acc = ~frozen[active] if aldous else np.ones(active.size, bool)
        obj[active[acc]] += -ldS[acc] * (t_next - t_k)

        if k % B == 0:
            for r in active:
                buf[r] = gens[r].standard_normal((B, d))
        xi = buf[active, k % B]
        if lift:
            S = np.sqrt(model.z_cov(Zb))
        else:
            S = sqrtm_spd(A)
        step = sqh * np.einsum("kij,kj->ki", S, xi)
        scale = np.ones(active.size)
        prop = Zb + step
        bad = ~model.admissible(prop)
        tries = 0
        while bad.any() and tries < MAX_BISECT:
            scale[bad] *= 0.5
            prop[bad] = Zb[bad] + scale[bad, None] * step[bad]
            bad[bad] = ~model.admissible(prop[bad])
            tries += 1
        if bad.any():
            # give up on these paths at the current state
            rows = active[bad]
            u_stop[rows] = k * h
            Y_stop[rows] = Yb[bad]
            label[rows] = _label(Yb[bad], cfg.r_snap)
            if aldous:
                nf = ~frozen[rows]
                if nf.any():
                    freeze(rows[nf], k, Yb[bad][nf], gb[bad][nf])
            else:
                intcov[rows] += covariance_budget(Yb[bad])
            prop[bad] = Zb[bad]
            scale[bad] = 0.0

        c2 = (scale**2)[:, None, None]
        if aldous:
            live = ~frozen[active]
            intcov[active[live]] += (c2 * A * h)[live]
        else:
            intcov[active] += c2 * A * h

        for j in np.flatnonzero(is_rec[active]):
            r = active[j]
            sig = None if bad[j] else 2.0 * A[j] / (1.0 - t_k)
            rec_pos[r].append((k * h, Yb[j].copy(), sig))
        Z[active] = prop
        active = active[~bad]
        k += 1

    if aldous:
        for j in range(test_k.size):
            miss = np.isnan(L[:, j])
            L[miss, j] = L_frozen[miss]

    paths = {}
    for r, steps in rec_pos.items():
        us = np.array([s[0] for s in steps])
        Ys = np.array([s[1] for s in steps])
        sig = np.array([s[2] for s in steps if s[2] is not None]).reshape(-1, d, d)
        paths[int(indices[r])] = PathSample(
            kind=model.kind, u=us, Y=Ys, sigma=sig, label=int(label[r]), path_index=int(indices[r]),
            trust_index=trust_index.get(r) if aldous else None, tail=tails.get(r, 0.0),
        )
    return Ensemble(
        kind=model.kind, x0=np.array(x0, dtype=float), config=cfg, path_index=indices.copy(),
        label=label, u_stop=u_stop, Y_stop=Y_stop, objective=obj, trunc_bound=trunc,
        intcov=intcov, L=L, test_times=np.array(cfg.test_times), g_stop=model.g_stop,
        trust_level=getattr(model, "trust_level", None), paths=paths,
    )


def _absorb_radius(model, cfg: SimConfig) -> float:
    if cfg.absorb_radius is not None:
        return float(cfg.absorb_radius)
    if model.kind == "aldous" and model.continuation:
        return DEFAULT_ABSORB_RADIUS
    return 0.0


def _field_arrays(field, d):
    if isinstance(field, ExactField1D):
        return (1, 1, np.full(1, -1, np.int64), np.zeros((1, 3)))
    lut = np.where(field._interior_flat, field._lut_flat, -1).astype(np.int64)
    return (0, field.grid.n, lut, np.ascontiguousarray(field._table))


_KIND = {"aldous": 0, "logistic1d": 1, "productLift": 2}


def _run_numba(model, x0: np.ndarray, cfg: SimConfig, indices: np.ndarray) -> Ensemble:
    """Compiled engine: each path is advanced on its own through blocks of normals."""
    from . import _kernels

    d = model.dim
    n = indices.size
    h = cfg.h_u
    aldous = model.kind == "aldous"
    lift = model.kind == "productLift"
    state0 = model.to_z(x0[None, :])[0] if lift else x0
    Z = np.tile(state0, (n, 1))
    k_now = np.zeros(n, np.int64)
    alive = np.ones(n, bool)
    frozen = np.zeros(n, bool)
    obj = np.zeros(n)
    trunc = np.zeros(n)
    intcov = np.zeros((n, d, d))
    test_u = -2.0 * np.log1p(-np.asarray(cfg.test_times))
    test_k = np.rint(test_u / h).astype(np.int64) if aldous else np.zeros(0, np.int64)
    L = np.full((n, test_k.size), np.nan)
    L_frozen = np.full(n, np.nan)
    u_stop = np.zeros(n)
    Y_stop = np.zeros((n, d))
    label = np.full(n, CENSORED, np.int64)
    tail = np.zeros(n)
    trust_k = np.full(n, -1, np.int64)
    B = cfg.block
    rec_rows = [int(np.flatnonzero(indices == r)[0]) for r in cfg.record if np.any(indices == r)]
    rec_slot = np.full(n, -1, np.int64)
    rec_slot[rec_rows] = np.arange(len(rec_rows))
    nr = max(len(rec_rows), 1)
    rec_u = np.zeros((nr, B + 1))
    rec_Y = np.zeros((nr, B + 1, d))
    rec_S = np.zeros((nr, B + 1, d, d))
    rec_len = np.zeros(nr, np.int64)
    chunks = {r: [] for r in rec_rows}
    if aldous:
        fa = _field_arrays(model.field, d)
        g_stop, trust, cont, scale = model.g_stop, model.trust_level, model.continuation, model.scale
    else:
        fa = _field_arrays(ExactField1D(), 1)
        g_stop, trust, cont, scale = model.g_stop, np.inf, False, 1.0
    absorb_r = _absorb_radius(model, cfg)
    max_steps = int(np.ceil(cfg.U_max / h))
    gens = _streams(cfg.seed, indices)
    tgrid = -np.expm1(-0.5 * h * np.arange(max_steps + 2))

    while alive.any():
        active = np.flatnonzero(alive)
        normals = np.empty((active.size, B, d))
        for a, p in enumerate(active):
            normals[a] = gens[p].standard_normal((B, d))
        rec_len[:] = 0
        _kernels.advance(
            _KIND[model.kind], Z, k_now, alive, frozen, obj, trunc, intcov, L, L_frozen, test_k,
            u_stop, Y_stop, label, tail, trust_k,
            normals, active, B, h, tgrid, max_steps, g_stop, trust, cont, scale, absorb_r, cfg.r_snap, EPS_DOM,
            *fa, rec_slot, rec_u, rec_Y, rec_S, rec_len,
        )
        for r in rec_rows:
            m = rec_len[rec_slot[r]]
            sl = rec_slot[r]
            chunks[r].append((rec_u[sl, :m].copy(), rec_Y[sl, :m].copy(), rec_S[sl, :m].copy()))

    if aldous:
        for j in range(test_k.size):
            miss = np.isnan(L[:, j])
            L[miss, j] = L_frozen[miss]
    paths = {}
    for r in rec_rows:
        us = np.concatenate([c[0] for c in chunks[r]])
        Ys = np.concatenate([c[1] for c in chunks[r]])
        Ss = np.concatenate([c[2] for c in chunks[r]])
        keep = ~np.isnan(Ss[:, 0, 0])
        paths[int(indices[r])] = PathSample(
            kind=model.kind, u=us, Y=Ys, sigma=Ss[keep], label=int(label[r]), path_index=int(indices[r]),
            trust_index=int(trust_k[r]) if aldous else None, tail=float(tail[r]) if aldous else 0.0,
        )
    return Ensemble(
        kind=model.kind, x0=np.array(x0, dtype=float), config=cfg, path_index=indices.copy(),
        label=label, u_stop=u_stop, Y_stop=Y_stop, objective=obj, trunc_bound=trunc,
        intcov=intcov, L=L if aldous else None, test_times=np.array(cfg.test_times), g_stop=g_stop,
        trust_level=trust if aldous else None, paths=paths,
    )


def _run(model, x0, cfg: SimConfig, indices) -> Ensemble:
    if cfg.engine == "numba":
        return _run_numba(model, x0, cfg, indices)
    return _run_numpy(model, x0, cfg, indices)


def _run_chunk(args):
    model, x0, cfg, idx = args
    return _run(model, x0, cfg, idx)


def _dispatch(model, x0, cfg: SimConfig, indices) -> Ensemble:
    indices = np.asarray(indices, dtype=np.int64)
    if cfg.workers <= 1 or indices.size < 2 * cfg.workers:
        return _run(model, x0, cfg, indices)
    chunks = np.array_split(indices, cfg.workers)
    with ProcessPoolExecutor(cfg.workers) as ex:
        parts = list(ex.map(_run_chunk, [(model, x0, cfg, c) for c in chunks]))
    return Ensemble.concat(parts)


def _field_level(field) -> float:
    return float(getattr(field, "level", np.inf))


def aldous_model(field, cfg: SimConfig, d: int) -> AldousModel:
    C = _field_level(field)
    cont = (d >= 2) if cfg.continuation is None else bool(cfg.continuation)
    trust = cfg.trust_level if cfg.trust_level is not None else C - 2.0
    if cfg.g_stop is not None:
        g_stop = cfg.g_stop
    else:
        g_stop = max(C - 2.0, 12.0 * d) if cont else C - 2.0
    if not np.isfinite(g_stop):
        g_stop = 12.0 * d
    if not np.isfinite(trust):
        trust = g_stop
    if not cont and g_stop > C - 1.0:
        raise ValueError(f"g_stop={g_stop} leaves no margin below the solved level {C}")
    if trust > C - 1.0:
        raise ValueError(f"trust_level={trust} leaves no margin below the solved level {C}")
    return AldousModel(field, g_stop, trust, cont)


def _check_x0(x0, field=None) -> np.ndarray:
    x = SimplexPoint(x0).coords.copy()
    if field is not None:
        if x.size != field.dim:
            raise ValueError(f"x0 has dimension {x.size}, field has {field.dim}")
        if not field.contains(x[None, :])[0]:
            raise ValueError(f"x0={x} is outside the solved region")
    return x


def run_aldous(x0, field, cfg: SimConfig, indices=None) -> Ensemble:
    """Simulate ``cfg.n_paths`` optimal paths (or the given path indices)."""
    x = _check_x0(x0, field)
    model = aldous_model(field, cfg, x.size)
    idx = np.arange(cfg.n_paths) if indices is None else indices
    return _dispatch(model, x, cfg, idx)


def run_baseline(kind: str, x0, cfg: SimConfig, indices=None) -> Ensemble:
    x = _check_x0(x0)
    g_stop = cfg.g_stop if cfg.g_stop is not None else BASELINE_G_STOP
    if kind == "logistic1d":
        if x.size != 1:
            raise ValueError("logistic1d requires d = 1")
        model = Logistic1DModel(g_stop)
    elif kind == "productLift":
        if x.size != 2:
            raise ValueError("productLift is implemented for d = 2")
        model = ProductLiftModel(g_stop)
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    idx = np.arange(cfg.n_paths) if indices is None else indices
    return _dispatch(model, x, cfg, idx)


def simulate_aldous(x0, cfg: SimConfig, path_index: int, field) -> PathSample:
    """Single recorded path; identical to path ``path_index`` of any batch run."""
    cfg1 = replace(cfg, record=(path_index,), workers=1)
    ens = run_aldous(x0, field, cfg1, indices=[path_index])
    return ens.paths[path_index]


def simulate_baseline(kind: str, x0, cfg: SimConfig, path_index: int) -> PathSample:
    cfg1 = replace(cfg, record=(path_index,), workers=1)
    ens = run_baseline(kind, x0, cfg1, indices=[path_index])
    return ens.paths[path_index]


def sigma_star(t: float, x, field):
    """``(Sigma*, sqrt(Sigma*))`` with ``Sigma* = 2 H^{-1} / (1 - t)``."""
    if not t < 1:
        raise ValueError("t must be < 1")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    _, _, H, ok = field.eval_many(x, what="gH")
    if not ok[0]:
        raise ExtrapolationError("x outside the solved region")
    if np.any(np.linalg.eigvalsh(H[0]) <= 0):
        raise ArithmeticError("Hessian not positive definite")
    inv, _ = _inv_logdet(H)
    S = 2.0 * inv / (1.0 - t)
    return S[0], sqrtm_spd(S)[0]


def write_path_dump(fh, ens: Ensemble) -> None:
    """CSV with one row per recorded step of every recorded path."""
    d = ens.dim
    cols = ["path_index", "k", "u", "t"] + [f"Y{i + 1}" for i in range(d)] + ["logdetSigma"]
    fh.write(",".join(cols) + "\n")
    for pi in sorted(ens.paths):
        p = ens.paths[pi]
        ld = p.logdet_sigma
        t = p.t
        for k in range(len(p.u)):
            lds = f"{ld[k]:.9g}" if k < len(ld) else ""
            ys = ",".join(f"{v:.17g}" for v in p.Y[k])
            fh.write(f"{pi},{k},{p.u[k]:.17g},{t[k]:.17g},{ys},{lds}\n")


def write_summary(fh, ens: Ensemble) -> None:
    """One CSV row per path; floats round-trip exactly (17 significant digits)."""
    fh.write(",".join(ens.summary_columns()) + "\n")
    for row in ens.summary_rows():
        fh.write(",".join([str(row[0]), str(row[1])] + [f"{v:.17g}" for v in row[2:]]) + "\n")


def read_summary(fh, kind: str, x0, config: SimConfig, g_stop: float, trust_level: float | None = None) -> Ensemble:
    """Rebuild an :class:`Ensemble` (without recorded paths) from :func:`write_summary` output."""
    rows = list(csv.reader(fh))
    if not rows:
        raise ValueError("empty summary file")
    head, body = rows[0], rows[1:]
    x = np.asarray(x0, dtype=float).reshape(-1)
    d = x.size
    col = {name: i for i, name in enumerate(head)}
    need = ["path_index", "label", "u_stop", "objective", "trunc_bound"] + [f"Y{i + 1}_stop" for i in range(d)]
    missing = [c for c in need if c not in col]
    if missing:
        raise ValueError(f"summary file lacks columns {missing}")
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(head))
    n = data.shape[0]
    intcov = np.zeros((n, d, d))
    for i in range(d):
        for j in range(i, d):
            intcov[:, i, j] = intcov[:, j, i] = data[:, col[f"C{i + 1}{j + 1}"]]
    lcols = [c for c in head if c.startswith("L_t")]
    L = data[:, [col[c] for c in lcols]] if lcols else None
    return Ensemble(
        kind=kind, x0=x, config=config,
        path_index=data[:, col["path_index"]].astype(np.int64),
        label=data[:, col["label"]].astype(np.int64),
        u_stop=data[:, col["u_stop"]],
        Y_stop=data[:, [col[f"Y{i + 1}_stop"] for i in range(d)]],
        objective=data[:, col["objective"]],
        trunc_bound=data[:, col["trunc_bound"]],
        intcov=intcov, L=L,
        test_times=np.asarray(config.test_times) if lcols else np.zeros(0),
        g_stop=g_stop, trust_level=trust_level,
    )

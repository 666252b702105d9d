"""Finite-difference solver for ``g = log det(hess(g)/2)`` on the simplex with ``g = +inf`` on the boundary.

The infinite boundary condition is handled by solving Dirichlet problems on the
nested sublevel domains ``{w < C_1} ⊂ ... ⊂ {w < C_K}`` of the barrier ``w``.
Each level is a damped Newton solve of the centred-difference discretisation on
the lattice ``(1/n) Z^d``.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging
import time
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .simplex import SimplexDomainError, SublevelSpec, barrier_w_unchecked, _ratio

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-8


class GridError(ValueError):
    pass


class NewtonDivergence(RuntimeError):
    def __init__(self, msg, last_residual=np.nan):
        super().__init__(msg)
        self.last_residual = last_residual


class ConvexityLoss(RuntimeError):
    pass


class ExtrapolationError(ValueError):
    """Query point lies outside the region where the solved field can be evaluated."""


# ---------------------------------------------------------------------------
# exact one-dimensional solution

def exact_g_1d(x):
    """``g = log(pi^2 / sin^2(pi x))`` with first and second derivatives."""
    x = np.asarray(x, dtype=float)
    if np.any((x <= 0) | (x >= 1)):
        raise SimplexDomainError("exact_g_1d needs 0 < x < 1")
    s = np.sin(np.pi * x)
    g = np.log(np.pi**2 / s**2)
    g1 = -2.0 * np.pi * np.cos(np.pi * x) / s
    g2 = 2.0 * np.pi**2 / s**2
    if x.ndim == 0:
        return float(g), float(g1), float(g2)
    return g, g1, g2


class ExactField1D:
    """Closed-form d=1 solution exposed through the same evaluation API as :class:`GradHessField`."""

    dim = 1
    level = np.inf

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, 1)
        return (X[:, 0] > 0) & (X[:, 0] < 1)

    def eval_many(self, X, what: str = "ghH"):
        X = np.asarray(X, dtype=float).reshape(-1, 1)
        ok = self.contains(X)
        x = np.where(ok, X[:, 0], 0.5)
        g, g1, g2 = exact_g_1d(x)
        nan = np.where(ok, 1.0, np.nan)
        return g * nan, (g1 * nan)[:, None], (g2 * nan)[:, None, None], ok

    def eval(self, x):
        x = np.asarray(x, dtype=float).reshape(1, 1)
        g, gr, H, ok = self.eval_many(x)
        if not ok[0]:
            raise ExtrapolationError(f"{x.ravel()} outside (0, 1)")
        return float(g[0]), gr[0], H[0]


# ---------------------------------------------------------------------------
# grid

@dataclass(frozen=True, eq=False)
class Grid:
    """Lattice nodes of ``(1/n) Z^d`` in a sublevel domain plus the boundary layer.

    ``index`` lists every node (interior and boundary layer) in row-major
    lexicographic order of the integer lattice coordinates.
    """

    d: int
    n: int
    level: float
    index: np.ndarray
    interior: np.ndarray
    lut: np.ndarray = dc_field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def coords(self) -> np.ndarray:
        return self.index / self.n

    @property
    def n_nodes(self) -> int:
        return self.index.shape[0]

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    def lookup(self, idx: np.ndarray) -> np.ndarray:
        """Node numbers for integer lattice indices, -1 where absent."""
        idx = np.asarray(idx)
        inside = np.all((idx >= 0) & (idx <= self.n), axis=-1)
        safe = np.where(inside[..., None], idx, 0)
        out = self.lut[tuple(np.moveaxis(safe, -1, 0))]
        return np.where(inside, out, -1)


def stencil_offsets(d: int, mixed: str = "skew") -> list[tuple[np.ndarray, float, int, int]]:
    """Entries ``(offset, weight_in_units_of_n^2, a, b)`` of the centred Hessian stencil.

    Mixed derivatives use either the 4-point cross ``±e_a ± e_b`` (``"cross"``)
    or ``(D_aa + D_bb - D_{e_a - e_b}) / 2`` (``"skew"``), whose neighbours
    ``±(e_a - e_b)`` keep ``sum(x)`` fixed and so never step towards the face
    ``sum(x) = 1``.
    """
    out = []
    eye = np.eye(d, dtype=int)
    zero = np.zeros(d, dtype=int)
    for a in range(d):
        out += [(eye[a], 1.0, a, a), (-eye[a], 1.0, a, a), (zero, -2.0, a, a)]
    for a, b in itertools.combinations(range(d), 2):
        if mixed == "cross":
            for sa, sb in itertools.product((1, -1), repeat=2):
                out.append((sa * eye[a] + sb * eye[b], 0.25 * sa * sb, a, b))
        elif mixed == "skew":
            v = eye[a] - eye[b]
            for c in (a, b):
                out += [(eye[c], 0.5, a, b), (-eye[c], 0.5, a, b), (zero, -1.0, a, b)]
            out += [(v, -0.5, a, b), (-v, -0.5, a, b), (zero, 1.0, a, b)]
        else:
            raise ValueError(f"unknown mixed stencil {mixed!r}")
    return out


def _lattice_resolution(h: float) -> int:
    if not h > 0:
        raise GridError("h must be positive")
    n = int(round(1.0 / h))
    if n < 2 or abs(n * h - 1.0) > 1e-9:
        raise GridError(f"h={h} must be the reciprocal of an integer")
    return n


def build_grid(d: int, spec: SublevelSpec | float, h: float) -> Grid:
    """Interior nodes of ``{w < C}`` on the lattice ``h Z^d`` and their boundary layer."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if not isinstance(spec, SublevelSpec):
        spec = SublevelSpec(float(spec))
    if spec.is_empty(d):
        raise GridError(f"sublevel set {{w < {spec.level}}} is empty in d={d}")
    n = _lattice_resolution(h)
    idx = np.indices((n + 1,) * d).reshape(d, -1).T
    strict = np.all(idx >= 1, axis=1) & (idx.sum(axis=1) <= n - 1)
    idx = idx[strict]
    w = barrier_w_unchecked(idx / n)
    inner = idx[w < spec.level]
    if inner.shape[0] == 0:
        raise GridError("no lattice node inside the sublevel set; refine h")
    span = inner.max(axis=0) - inner.min(axis=0)
    if span.max() < 10:
        raise GridError(f"h={h} too coarse: fewer than 10 nodes across the domain")

    neigh = [inner + off for off, *_ in stencil_offsets(d)]
    neigh = np.unique(np.concatenate(neigh), axis=0)
    if np.any(neigh.min(axis=1) < 1) or np.any(neigh.sum(axis=1) > n - 1):
        raise GridError(f"h={h} too coarse: stencil reaches the simplex boundary at level {spec.level}")
    # np.unique sorts rows lexicographically, i.e. row-major lattice order
    nodes = neigh
    wn = barrier_w_unchecked(nodes / n)
    interior = wn < spec.level
    lut = np.full((n + 1,) * d, -1, dtype=np.int64)
    lut[tuple(nodes.T)] = np.arange(nodes.shape[0])
    return Grid(d=d, n=n, level=float(spec.level), index=nodes, interior=interior, lut=lut)


def grid_from_nodes(d: int, level: float, h: float, coords: np.ndarray) -> Grid:
    """Rebuild a :class:`Grid` from stored node coordinates (see :mod:`simplexma.fieldio`)."""
    n = _lattice_resolution(h)
    idx = np.rint(coords * n).astype(np.int64)
    interior = barrier_w_unchecked(idx / n) < level
    lut = np.full((n + 1,) * d, -1, dtype=np.int64)
    lut[tuple(idx.T)] = np.arange(idx.shape[0])
    return Grid(d=d, n=n, level=float(level), index=idx, interior=interior, lut=lut)


# ---------------------------------------------------------------------------
# fields

@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_nodes,):
            raise ValueError("values must have one entry per grid node")
        object.__setattr__(self, "values", v)


def dirichlet_data(grid: Grid, kind: str = "corrected") -> np.ndarray:
    """Boundary values at every node: ``w`` (``kind='barrier'``) or ``log det(hess(w)/2)``."""
    x = grid.coords
    w = barrier_w_unchecked(x)
    if kind == "barrier":
        return w
    if kind == "corrected":
        return w + np.log(_ratio(x))
    raise ValueError(f"unknown Dirichlet data {kind!r}")


def _neighbour_table(grid: Grid):
    """Node numbers of each stencil neighbour, for interior nodes only."""
    inner = grid.index[grid.interior]
    return [grid.lookup(inner + off) for off, *_ in stencil_offsets(grid.d)]


def fd_hessian(grid: Grid, values: np.ndarray, nbr=None) -> np.ndarray:
    """Centred finite-difference Hessian at interior nodes, shape ``(m, d, d)``."""
    nbr = _neighbour_table(grid) if nbr is None else nbr
    d = grid.d
    m = grid.n_interior
    D = np.zeros((m, d, d))
    n2 = float(grid.n) ** 2
    for (off, wgt, a, b), j in zip(stencil_offsets(d), nbr):
        D[:, a, b] += wgt * n2 * values[j]
    iu = np.triu_indices(d, 1)
    D[:, iu[1], iu[0]] = D[:, iu[0], iu[1]]
    return D


def fd_gradient(grid: Grid, values: np.ndarray) -> np.ndarray:
    inner = grid.index[grid.interior]
    out = np.empty((inner.shape[0], grid.d))
    eye = np.eye(grid.d, dtype=int)
    for a in range(grid.d):
        up = grid.lookup(inner + eye[a])
        dn = grid.lookup(inner - eye[a])
        out[:, a] = 0.5 * grid.n * (values[up] - values[dn])
    return out


def spd_logdet_inv(D: np.ndarray, floor: float | None = None):
    """``(logdet, inverse, is_spd)`` for a batch of symmetric matrices.

    With ``floor`` set, non-SPD entries are replaced by their eigenvalue-clamped
    projection; otherwise their logdet is ``nan``.
    """
    m, d, _ = D.shape
    if d == 1:
        a = D[:, 0, 0]
        ok = a > 0
        aa = np.where(ok, a, 1.0)
        ld = np.where(ok, np.log(aa), np.nan)
        inv = (1.0 / aa)[:, None, None]
    elif d == 2:
        a, b, c = D[:, 0, 0], D[:, 0, 1], D[:, 1, 1]
        det = a * c - b * b
        ok = (a > 0) & (det > 0)
        dd = np.where(ok, det, 1.0)
        ld = np.where(ok, np.log(dd), np.nan)
        inv = np.empty_like(D)
        inv[:, 0, 0] = c / dd
        inv[:, 1, 1] = a / dd
        inv[:, 0, 1] = inv[:, 1, 0] = -b / dd
    else:
        lam = np.linalg.eigvalsh(D)
        ok = lam.min(axis=1) > 0
        ld = np.where(ok, np.log(np.where(ok[:, None], lam, 1.0)).sum(axis=1), np.nan)
        inv = np.linalg.inv(np.where(ok[:, None, None], D, np.eye(d)))
    if floor is not None and not ok.all():
        bad = ~ok
        lam, V = np.linalg.eigh(D[bad])
        lam = np.maximum(lam, floor)
        ld = ld.copy()
        ld[bad] = np.log(lam).sum(axis=1)
        inv = inv.copy()
        inv[bad] = np.einsum("kij,kj,klj->kil", V, 1.0 / lam, V)
    return ld, inv, ok


@dataclass
class SolveConfig:
    levels: Sequence[float] = (6.0, 8.0, 10.0)
    h: float | Sequence[float] = 1e-3
    tol_res: float = 1e-8
    max_iter: int = 200
    max_halvings: int = 10
    max_nonmonotone: int = 20
    dirichlet: str = "corrected"
    lambda_floor: float = LAMBDA_FLOOR

    def __post_init__(self):
        self.levels = tuple(float(c) for c in self.levels)
        if not self.levels:
            raise ValueError("at least one level required")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError(f"levels must be strictly increasing, got {self.levels}")
        if not self.tol_res > 0:
            raise ValueError("tol_res must be positive")
        hs = self.hs
        if len(hs) != len(self.levels):
            raise ValueError("one grid spacing per level required")

    @property
    def hs(self) -> tuple[float, ...]:
        if np.ndim(self.h) == 0:
            return (float(self.h),) * len(self.levels)
        return tuple(float(v) for v in self.h)


@dataclass
class SolveReport:
    levels: list[float] = dc_field(default_factory=list)
    h: list[float] = dc_field(default_factory=list)
    residual_history: list[list[float]] = dc_field(default_factory=list)
    final_residual: float = np.nan
    sandwich_violations: int = 0
    clamp_used: bool = False
    stabilization: list[float] = dc_field(default_factory=list)
    continuation_steps: list[int] = dc_field(default_factory=list)
    n_nodes: list[int] = dc_field(default_factory=list)
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        return {
            "levels": self.levels,
            "h": self.h,
            "n_nodes": self.n_nodes,
            "newton_iterations": [len(r) - 1 for r in self.residual_history],
            "residual_history": self.residual_history,
            "final_residual": self.final_residual,
            "sandwich_violations": self.sandwich_violations,
            "clamp_used": self.clamp_used,
            "stabilization": self.stabilization,
            "continuation_steps": self.continuation_steps,
            "wall_time": self.wall_time,
        }


def residual(field) -> float:
    """Max over interior nodes of ``|g - log det(D_h^2 g / 2)|``; ``inf`` if convexity is lost."""
    sf = field.base if isinstance(field, GradHessField) else field
    grid = sf.grid
    D = fd_hessian(grid, sf.values)
    ld, _, ok = spd_logdet_inv(0.5 * D)
    if not ok.all():
        return np.inf
    return float(np.max(np.abs(sf.values[grid.interior] - ld)))


def sandwich_violations(sf: ScalarField) -> int:
    grid = sf.grid
    x = grid.coords[grid.interior]
    w = barrier_w_unchecked(x)
    g = sf.values[grid.interior]
    return int(np.sum((g < w - np.log(grid.d + 1)) | (g > w)))


class _Newton:
    """Damped Newton iteration for the discrete equation on one grid."""

    def __init__(self, grid: Grid, boundary: np.ndarray, cfg: SolveConfig):
        self.grid = grid
        self.cfg = cfg
        self.boundary = boundary
        self.nbr = _neighbour_table(grid)
        self.pos = np.full(grid.n_nodes, -1, dtype=np.int64)
        self.pos[grid.interior] = np.arange(grid.n_interior)
        self.clamp_used = False
        # sparsity pattern of the Jacobian
        rows, cols, coef, comp = [], [], [], []
        m = grid.n_interior
        d = grid.d
        n2 = float(grid.n) ** 2
        for (off, wgt, a, b), j in zip(stencil_offsets(d), self.nbr):
            p = self.pos[j]
            keep = p >= 0
            r = np.arange(m)[keep]
            rows.append(r)
            cols.append(p[keep])
            mult = 1.0 if a == b else 2.0
            coef.append(np.full(r.size, -0.5 * wgt * n2 * mult))
            comp.append(np.full(r.size, a * d + b))
        self.rows = np.concatenate(rows + [np.arange(m)])
        self.cols = np.concatenate(cols + [np.arange(m)])
        self.coef = np.concatenate(coef)
        self.comp = np.concatenate(comp)
        self.n_terms = self.coef.size

    def full(self, u: np.ndarray) -> np.ndarray:
        v = self.boundary.copy()
        v[self.grid.interior] = u
        return v

    def residual(self, u: np.ndarray, floor=None):
        D = fd_hessian(self.grid, self.full(u), self.nbr)
        ld, inv, ok = spd_logdet_inv(0.5 * D, floor=floor)
        return u - ld, inv, ok

    def jacobian(self, inv_half: np.ndarray):
        # d/dg log det(D/2) = tr((D/2)^{-1} dD/2)
        m, d, _ = inv_half.shape
        flat = inv_half.reshape(m, d * d)
        r = self.rows[: self.n_terms]
        data = self.coef * flat[r, self.comp]
        data = np.concatenate([data, np.ones(m)])
        return sp.csc_matrix((data, (self.rows, self.cols)), shape=(m, m))

    def solve(self, u0: np.ndarray):
        cfg = self.cfg
        floor = cfg.lambda_floor
        u = u0.copy()
        F, inv, ok = self.residual(u, floor=floor)
        if not ok.all():
            self.clamp_used = True
        history = [float(np.max(np.abs(F)))]
        nonmonotone = 0
        for it in range(cfg.max_iter):
            if history[-1] <= cfg.tol_res and ok.all():
                return u, history
            J = self.jacobian(inv)
            step = spla.spsolve(J, -F)
            if not np.all(np.isfinite(step)):
                raise NewtonDivergence("singular Newton system", history[-1])
            norm0 = np.linalg.norm(F)
            convex_trial = None
            for k in range(cfg.max_halvings + 1):
                alpha = 0.5**k
                cand = u + alpha * step
                Fc, invc, okc = self.residual(cand, floor=floor)
                if not np.all(np.isfinite(Fc)):
                    continue
                if convex_trial is None and okc.all():
                    convex_trial = (alpha, cand, Fc, invc, okc)
                if np.linalg.norm(Fc) < norm0 * (1 - 1e-4 * alpha):
                    break
            else:
                # F is convex in g, so Newton from a far start may raise the
                # residual before it contracts; allow a few such steps as long
                # as the iterate stays discretely convex
                if convex_trial is None or nonmonotone >= cfg.max_nonmonotone:
                    raise NewtonDivergence(
                        f"line search failed at iteration {it} (residual {history[-1]:.3e})", history[-1]
                    )
                nonmonotone += 1
                alpha, cand, Fc, invc, okc = convex_trial
            if not okc.all():
                self.clamp_used = True
            u, F, inv, ok = cand, Fc, invc, okc
            history.append(float(np.max(np.abs(F))))
            log.debug("newton it=%d alpha=%g res=%.3e", it, alpha, history[-1])
        if history[-1] <= cfg.tol_res and ok.all():
            return u, history
        raise NewtonDivergence(f"no convergence after {cfg.max_iter} iterations", history[-1])


def initial_guess(grid: Grid, kind: str = "corrected") -> np.ndarray:
    """Starting values inside the sandwich: ``w - log(d+1)``, ``w`` or ``log det(hess(w)/2)``."""
    x = grid.coords
    w = barrier_w_unchecked(x)
    if kind == "subsolution":
        return w - np.log(grid.d + 1)
    if kind == "supersolution":
        return w
    if kind == "corrected":
        return w + np.log(_ratio(x))
    raise ValueError(f"unknown initial guess {kind!r}")


def solve_dirichlet(grid: Grid, init: ScalarField | str | None = None, config: SolveConfig | None = None):
    """Newton solve on one sublevel grid; returns ``(ScalarField, SolveReport)``.

    ``init`` is a field on ``grid`` or one of ``"corrected"`` (default),
    ``"subsolution"``, ``"supersolution"``.
    """
    cfg = config or SolveConfig(levels=(grid.level,), h=grid.h)
    t0 = time.perf_counter()
    boundary = dirichlet_data(grid, cfg.dirichlet)
    if init is None or isinstance(init, str):
        v0 = initial_guess(grid, init or "corrected")
    else:
        if init.grid is not grid and init.grid.n_nodes != grid.n_nodes:
            raise ValueError("init field lives on a different grid")
        v0 = np.asarray(init.values, dtype=float)
    u0 = v0[grid.interior]
    solver = _Newton(grid, boundary, cfg)
    steps = 0
    try:
        u, history = solver.solve(u0)
    except NewtonDivergence:
        u, history, steps = _continuation(grid, v0, boundary, cfg)
    values = solver.full(u)
    sf = ScalarField(grid, values)
    _, _, ok = solver.residual(u)
    if not ok.all():
        raise ConvexityLoss(f"discrete Hessian not positive definite at {int((~ok).sum())} nodes")
    rep = SolveReport(
        levels=[grid.level],
        h=[grid.h],
        residual_history=[history],
        final_residual=residual(sf),
        sandwich_violations=sandwich_violations(sf),
        clamp_used=solver.clamp_used,
        n_nodes=[grid.n_interior],
        continuation_steps=[steps],
        wall_time=time.perf_counter() - t0,
    )
    return sf, rep


def _continuation(grid: Grid, v0: np.ndarray, target: np.ndarray, cfg: SolveConfig):
    """Move the boundary data from the start field's own boundary values to ``target``.

    A start field that is smooth and convex but disagrees with the Dirichlet
    data has a kink at the boundary layer, where the discrete Hessian can be
    indefinite. Solving first with the start's own boundary values and then
    deforming the data linearly avoids that. Steps adapt by halving.
    """
    layer = ~grid.interior
    b0 = v0.copy()
    lam, dlam, total = 0.0, 1.0, 0
    u = v0[grid.interior]
    history = []
    first = True
    while lam < 1.0 or first:
        nxt = min(1.0, lam + dlam) if not first else 0.0
        b = v0.copy()
        b[layer] = (1 - nxt) * b0[layer] + nxt * target[layer]
        # intermediate stages only need to land near the path
        stage_cfg = cfg if nxt >= 1.0 else dataclasses.replace(cfg, tol_res=max(cfg.tol_res, 1e-3))
        try:
            u_new, hist = _Newton(grid, b, stage_cfg).solve(u)
        except NewtonDivergence:
            if first or dlam < 2.0**-12:
                raise
            dlam *= 0.5
            continue
        u, lam, first = u_new, nxt, False
        history.extend(hist)
        total += 1
        dlam = min(1.0, 2 * dlam)
    return u, history, total


def _start_residual(grid: Grid, v0: np.ndarray, cfg: SolveConfig) -> float:
    F, _, ok = _Newton(grid, dirichlet_data(grid, cfg.dirichlet), cfg).residual(v0[grid.interior])
    return float(np.max(np.abs(F))) if ok.all() else np.inf


def solve_nested(d: int, config: SolveConfig):
    """Solve on every level of ``config.levels`` and return the finest-level field.

    Each level is warm-started from the previous one where it is defined. The
    report's ``stabilization`` lists ``sup |g^(k) - g^(k+1)|`` over the first
    level's interior nodes.
    """
    t0 = time.perf_counter()
    rep = SolveReport()
    prev = None
    first_nodes = None
    first_vals = []
    for C, h in zip(config.levels, config.hs):
        grid = build_grid(d, SublevelSpec(C), h)
        init = None
        if prev is not None:
            u0 = initial_guess(grid)
            gp = prev.value_at_nodes_or_interp(grid.coords)
            u0 = np.where(np.isfinite(gp), gp, u0)
            # keep the warm start inside the sandwich
            w = barrier_w_unchecked(grid.coords)
            u0 = np.clip(u0, w - np.log(d + 1), w)
            init = ScalarField(grid, u0)
            # the warm start has a kink where the previous domain ends; on fine
            # grids that can cost more than it saves
            if _start_residual(grid, u0, config) > _start_residual(grid, initial_guess(grid), config):
                init = None
        try:
            sf, r = solve_dirichlet(grid, init, config)
        except (NewtonDivergence, ConvexityLoss):
            if init is None:
                raise
            log.info("warm start failed at C=%g, retrying from the barrier guess", C)
            sf, r = solve_dirichlet(grid, None, config)
        log.info("level C=%g h=%g nodes=%d its=%d res=%.2e", C, h, grid.n_interior,
                 len(r.residual_history[0]) - 1, r.final_residual)
        rep.levels.append(C)
        rep.h.append(h)
        rep.residual_history.extend(r.residual_history)
        rep.n_nodes.extend(r.n_nodes)
        rep.continuation_steps.extend(r.continuation_steps)
        rep.sandwich_violations += r.sandwich_violations
        rep.clamp_used |= r.clamp_used
        prev = GradHessField(sf)
        if first_nodes is None:
            first_nodes = grid.coords[grid.interior]
        first_vals.append(prev.value_at_nodes_or_interp(first_nodes))
    rep.stabilization = [float(np.nanmax(np.abs(a - b))) for a, b in zip(first_vals, first_vals[1:])]
    rep.final_residual = residual(prev)
    rep.wall_time = time.perf_counter() - t0
    return prev, rep


# ---------------------------------------------------------------------------
# evaluation

class GradHessField:
    """Immutable interpolated view of a solved :class:`ScalarField`.

    Values are interpolated multilinearly; gradients and Hessians are centred
    differences at the nodes, interpolated multilinearly and symmetrised.
    Evaluation is defined on cells whose corners are all interior nodes.
    """

    def __init__(self, base: ScalarField):
        self.base = base
        grid = base.grid
        self.grid = grid
        self.dim = grid.d
        self.level = grid.level
        self.h = grid.h
        m = grid.n_nodes
        d = grid.d
        self._g = base.values.copy()
        self._grad = np.full((m, d), np.nan)
        self._hess = np.full((m, d, d), np.nan)
        self._grad[grid.interior] = fd_gradient(grid, base.values)
        self._hess[grid.interior] = fd_hessian(grid, base.values)
        self._interior_lut = np.zeros(grid.lut.shape, dtype=bool)
        self._interior_lut[tuple(grid.index[grid.interior].T)] = True
        self._corners = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
        self._strides = (grid.n + 1) ** np.arange(d - 1, -1, -1, dtype=np.int64)
        self._corner_flat = self._corners @ self._strides
        self._lut_flat = grid.lut.ravel()
        self._interior_flat = self._interior_lut.ravel()
        # one gather per query: columns g | grad | hess (row-major)
        self._table = np.concatenate([self._g[:, None], self._grad, self._hess.reshape(m, d * d)], axis=1)
        for arr in (self._g, self._grad, self._hess, self._interior_lut, self._table):
            arr.setflags(write=False)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.coords[self.grid.interior]

    @property
    def node_values(self) -> np.ndarray:
        return self._g[self.grid.interior]

    def node_derivatives(self):
        """Nodal ``(g, grad, hess)`` at interior nodes."""
        it = self.grid.interior
        return self._g[it], self._grad[it], self._hess[it]

    def _cells(self, X: np.ndarray):
        n = self.grid.n
        s = X * n
        base = np.floor(s).astype(np.int64)
        frac = s - base
        ok = np.all((base >= 0) & (base < n), axis=1)
        flat = np.where(ok, base @ self._strides, 0)
        idx = flat[:, None] + self._corner_flat[None, :]  # (N, 2^d)
        ok &= self._interior_flat[idx].all(axis=1)
        nodes = self._lut_flat[idx]
        if self.dim == 1:
            wts = np.concatenate([1.0 - frac, frac], axis=1)
        else:
            wts = np.prod(np.where(self._corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :]), axis=-1)
        return nodes, wts, ok

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return self._cells(X)[2]

    def eval_many(self, X, what: str = "ghH"):
        """Batch evaluation; returns ``(g, grad, hess, ok)`` with ``nan`` where not ``ok``.

        ``what`` selects outputs (``g``, ``h`` for the gradient, ``H`` for
        the Hessian); unselected ones are ``None``.
        """
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        d = self.dim
        nodes, wts, ok = self._cells(X)
        wts = np.where(ok[:, None], wts, np.nan)
        cols = self._table[:, : 1 + d] if "H" not in what else self._table
        vals = np.einsum("nc,nck->nk", wts, cols[nodes])
        g = vals[:, 0] if "g" in what else None
        grad = vals[:, 1 : 1 + d] if "h" in what else None
        hess = None
        if "H" in what:
            hess = vals[:, 1 + d :].reshape(-1, d, d)
            if d > 1:
                hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
        return g, grad, hess, ok

    def eval(self, x):
        x = np.asarray(x, dtype=float).reshape(1, self.dim)
        g, grad, hess, ok = self.eval_many(x)
        if not ok[0]:
            raise ExtrapolationError(f"{x.ravel()} is outside the solved region of level {self.level}")
        return float(g[0]), grad[0], hess[0]

    def value_at_nodes_or_interp(self, X: np.ndarray) -> np.ndarray:
        """Nodal value where ``X`` is an interior lattice node, interpolated value elsewhere (``nan`` if neither)."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        g, _, _, ok = self.eval_many(X, what="g")
        out = np.where(ok, g, np.nan)
        idx = np.rint(X * self.grid.n).astype(np.int64)
        on_lattice = np.all(np.abs(idx / self.grid.n - X) < 1e-12, axis=1)
        node = self.grid.lookup(idx)
        hit = on_lattice & (node >= 0)
        hit[hit] = self.grid.interior[node[hit]]
        out[hit] = self._g[node[hit]]
        return out

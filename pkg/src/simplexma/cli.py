"""Command line: ``simplexma {solve,simulate,verify,value}``.

Exit codes: 0 success, 1 a verification test failed, 2 usage or
infrastructure error. Every output file is written to a temporary name and
moved into place only when the command succeeds.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import ConfigError, RunConfig, SimSection, VerifySection, load_config
from .fieldio import FieldFormatError, load_field, save_field
from .simplex import SimplexDomainError
from .sim import SimConfig, aldous_model, read_summary, run_aldous, run_baseline, sigma_star, write_path_dump, \
    write_summary
from .solver import ExactField1D, ExtrapolationError, NewtonDivergence, SolveConfig, exact_g_1d, solve_nested
from .value import lower_bound, value

log = logging.getLogger("simplexma")

BATTERY = ("terminal_distribution", "censoring", "logdet_martingale", "objective_vs_value", "baseline_gap",
           "intcov_aldous", "intcov_baseline", "boundary_hessian_scan", "gradient_form_scan", "langevin_coupling")
_NEEDS_PATHS = {"terminal_distribution", "censoring", "logdet_martingale", "objective_vs_value", "intcov_aldous"}
_NEEDS_BASELINE = {"baseline_gap", "intcov_baseline"}
DEFAULT_X0 = {1: [0.5], 2: [0.2, 0.5]}
_RADII = {1: (0.05, 0.02, 0.01, 0.005), 2: (0.05, 0.04, 0.03, 0.02, 0.015, 0.01, 0.0075, 0.005)}


class UsageError(Exception):
    pass


def f9(v) -> str:
    return f"{float(v):.9g}"


def vec9(a) -> str:
    return "[" + ",".join(f9(v) for v in np.asarray(a, dtype=float).ravel()) + "]"


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


class _Outputs:
    """Collects files written by a command; removes them all unless committed."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.pending: list[tuple[Path, Path]] = []

    def open(self, name: str, mode: str = "w"):
        self.dir.mkdir(parents=True, exist_ok=True)
        final = self.dir / name
        tmp = self.dir / f".{name}.partial"
        self.pending.append((tmp, final))
        return open(tmp, mode, newline="" if "b" not in mode else None)

    def tmp_path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        final = self.dir / name
        tmp = self.dir / f".{name}.partial"
        self.pending.append((tmp, final))
        return tmp

    def commit(self):
        for tmp, final in self.pending:
            os.replace(tmp, final)
        self.pending = []

    def discard(self):
        for tmp, _ in self.pending:
            for p in (tmp, Path(f"{tmp}.tmp")):
                if p.exists():
                    p.unlink()
        self.pending = []


# ---------------------------------------------------------------------------
# configuration plumbing

def _base_config(args) -> RunConfig | None:
    return load_config(args.config) if getattr(args, "config", None) else None


def _seed(args, rc: RunConfig | None) -> int:
    seed = args.seed if args.seed is not None else (rc.seed if rc is not None else None)
    if seed is None:
        raise UsageError("a seed is required (--seed or 'seed' in the config file)")
    if seed < 0:
        raise UsageError("seed must be non-negative")
    return seed


def _outdir(args, rc: RunConfig | None) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(rc.output_dir if rc is not None else "out")


def _load_field(path):
    if path is None:
        raise UsageError("--field is required")
    if str(path) == "exact1d":
        return ExactField1D()
    if not Path(path).exists():
        raise UsageError(f"field file {path} not found; create it with 'simplexma solve'")
    return load_field(path)


def _sim_section(args, rc: RunConfig | None) -> SimSection:
    sec = replace(rc.simulate) if rc is not None else SimSection()
    for name in ("x0", "n_paths", "h_u", "U_max", "g_stop", "r_snap", "absorb_radius", "baseline", "record",
                 "workers", "engine"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(sec, name, v)
    return sec


def _sim_config(sec: SimSection, seed: int, n_record: int | None = None) -> SimConfig:
    n_rec = sec.record if n_record is None else n_record
    return SimConfig(seed=seed, n_paths=sec.n_paths, h_u=sec.h_u, U_max=sec.U_max, g_stop=sec.g_stop,
                     r_snap=sec.r_snap, continuation=sec.continuation, trust_level=sec.trust_level,
                     record=tuple(range(min(n_rec, sec.n_paths))), workers=sec.workers,
                     absorb_radius=sec.absorb_radius, engine=sec.engine)


def _x0(sec: SimSection, d: int) -> np.ndarray:
    x = np.asarray(sec.x0 if sec.x0 is not None else DEFAULT_X0[d], dtype=float)
    if x.size != d:
        raise UsageError(f"x0 has dimension {x.size} but the field has dimension {d}")
    return x


def _kv(pairs) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs)


# ---------------------------------------------------------------------------
# commands

def cmd_solve(args) -> int:
    rc = _base_config(args)
    scfg = rc.solve if rc is not None else SolveConfig()
    dim = args.dim if args.dim is not None else (rc.dim if rc is not None else 1)
    over = {k: v for k, v in (("levels", args.levels), ("h", args.h), ("tol_res", args.tol_res),
                              ("max_iter", args.max_iter), ("dirichlet", args.dirichlet)) if v is not None}
    try:
        scfg = SolveConfig(**{**scfg.__dict__, **over})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if dim not in (1, 2):
        raise UsageError("--dim must be 1 or 2")
    out = _Outputs(_outdir(args, rc))
    try:
        field, rep = solve_nested(dim, scfg)
        tmp = out.tmp_path("field.mafg")
        save_field(field, tmp)
        info = rep.as_dict()
        pairs = [("dim", dim), ("levels", vec9(info["levels"])), ("h", vec9(info["h"])),
                 ("n_nodes", "[" + ",".join(str(n) for n in info["n_nodes"]) + "]"),
                 ("newton_iterations", "[" + ",".join(str(n) for n in info["newton_iterations"]) + "]"),
                 ("final_residual", f9(info["final_residual"])),
                 ("sandwich_violations", info["sandwich_violations"]),
                 ("stabilization", vec9(info["stabilization"])),
                 ("continuation_steps", "[" + ",".join(str(n) for n in info["continuation_steps"]) + "]")]
        for i, hist in enumerate(info["residual_history"]):
            pairs.append((f"residual_history_{i}", vec9(hist)))
        if dim == 1:
            nodes = field.nodes[:, 0]
            err = np.max(np.abs(field.node_values - exact_g_1d(nodes)[0]))
            pairs.append(("max_error_vs_exact", f9(err)))
        with out.open("solve_report.txt") as fh:
            fh.write(_kv(pairs))
        if rep.sandwich_violations:
            raise RuntimeError(f"{rep.sandwich_violations} sandwich violations")
        out.commit()
    except BaseException:
        out.discard()
        raise
    log.info("solve finished in %.2f s", rep.wall_time)
    sys.stdout.write(_kv(pairs))
    return 0


def _ensembles(field, x0, sec: SimSection, seed: int, want_opt: bool, want_base: bool, args=None):
    d = x0.size
    cfg = _sim_config(sec, seed)
    opt = base = None
    if want_opt:
        summ = getattr(args, "summary", None)
        if summ:
            model = aldous_model(field, cfg, d)
            with open(summ, newline="") as fh:
                opt = read_summary(fh, "aldous", x0, cfg, model.g_stop, model.trust_level)
        else:
            opt = run_aldous(x0, field, cfg)
    if want_base:
        kind = sec.baseline or ("logistic1d" if d == 1 else "productLift")
        summ = getattr(args, "baseline_summary", None)
        if summ:
            with open(summ, newline="") as fh:
                base = read_summary(fh, kind, x0, cfg, cfg.g_stop if cfg.g_stop is not None else np.nan)
        else:
            base = run_baseline(kind, x0, cfg)
    return opt, base


def cmd_simulate(args) -> int:
    rc = _base_config(args)
    seed = _seed(args, rc)
    sec = _sim_section(args, rc)
    out = _Outputs(_outdir(args, rc))
    field = None
    if sec.baseline is None or args.field is not None:
        field = _load_field(args.field)
    d = field.dim if field is not None else (len(sec.x0) if sec.x0 is not None else (rc.dim if rc else 1))
    x0 = _x0(sec, d)
    cfg = _sim_config(sec, seed)
    try:
        if sec.baseline is None:
            ens = run_aldous(x0, field, cfg)
        else:
            ens = run_baseline(sec.baseline, x0, cfg)
        with out.open("paths.csv") as fh:
            write_path_dump(fh, ens)
        with out.open("summary.csv") as fh:
            write_summary(fh, ens)
        obj_mean = float(np.mean(ens.objective))
        obj_se = float(np.std(ens.objective, ddof=1) / np.sqrt(ens.n)) if ens.n > 1 else float("nan")
        pairs = [("kind", ens.kind), ("seed", seed), ("n_paths", ens.n), ("x0", vec9(x0)),
                 ("g_stop", f9(ens.g_stop)), ("trust_level", f9(ens.trust_level) if ens.trust_level else "na"),
                 ("censored_fraction", f9(np.mean(ens.censored))),
                 ("objective_mean", f9(obj_mean)), ("objective_se", f9(obj_se)),
                 ("vertex_counts", "[" + ",".join(str(int((ens.label == i).sum())) for i in range(d + 1)) + "]"),
                 ("mean_truncation_bound", f9(np.mean(ens.trunc_bound))),
                 ("config", json.dumps(diag.config_echo(cfg), sort_keys=True))]
        with out.open("simulate_report.txt") as fh:
            fh.write(_kv(pairs))
        out.commit()
    except BaseException:
        out.discard()
        raise
    sys.stdout.write(_kv(pairs[:-1]))
    return 0


def _coarse_partner(field, rc: RunConfig | None) -> object:
    """The same problem on a grid twice as coarse, for the refinement check."""
    C = field.level
    levels = tuple(rc.solve.levels) if rc is not None and rc.solve.levels[-1] == C else (C - 4.0, C - 2.0, C)
    return solve_nested(field.dim, SolveConfig(levels=levels, h=2.0 * field.h))[0]


def run_battery(field, x0, seed: int, tests, sec: SimSection, vsec: VerifySection, rc=None, args=None):
    """Run the selected tests; returns an :class:`~simplexma.diagnostics.McReport`."""
    d = x0.size
    tests = list(tests)
    opt, base = _ensembles(field, x0, sec, seed, bool(_NEEDS_PATHS & set(tests)), bool(_NEEDS_BASELINE & set(tests)),
                           args)
    cfg = _sim_config(sec, seed, n_record=0)
    report = diag.McReport(seed=seed, config={"x0": list(map(float, x0)), "simulate": diag.config_echo(cfg),
                                              "verify": diag.config_echo(vsec), "tests": tests})
    k = vsec.k
    for name in tests:
        if name == "terminal_distribution":
            e = diag.terminal_distribution_test(opt, x0, k=k, min_paths=vsec.min_paths)
        elif name == "censoring":
            e = diag.censoring_test(opt, vsec.censor_ceiling)
        elif name == "logdet_martingale":
            e = diag.logdet_martingale_test(opt, field, opt.test_times, k=k)
        elif name == "objective_vs_value":
            e = diag.objective_vs_value_test(opt, field, x0, allowance=vsec.allowance, k=k)
        elif name == "baseline_gap":
            e = diag.baseline_gap_test(base, value(0.0, field, x0), k=k)
        elif name == "intcov_aldous":
            e = diag.intcov_test(opt, x0, k=k)
        elif name == "intcov_baseline":
            e = diag.intcov_test(base, x0, k=k)
            e.name = "intcov_baseline"
        elif name == "boundary_hessian_scan":
            if isinstance(field, ExactField1D):
                raise UsageError("boundary_hessian_scan needs a solved field")
            face = vsec.face_point if vsec.face_point is not None else ([0.4] if d == 2 else None)
            radii = vsec.radii
            if radii is None:
                cand = np.array(_RADII[d])
                X = cand[:, None] if d == 1 else np.column_stack([cand, np.tile(face, (cand.size, 1))])
                radii = cand[field.contains(X)]
                if radii.size < 3:
                    raise ExtrapolationError("fewer than three scan radii inside the solved region")
            e = diag.boundary_hessian_scan(field, face, radii)
        elif name == "gradient_form_scan":
            if isinstance(field, ExactField1D):
                raise UsageError("gradient_form_scan needs a solved field")
            e = diag.gradient_form_scan(_coarse_partner(field, rc), refined=field, expected=2.0 if d == 1 else None)
        elif name == "langevin_coupling":
            e = diag.langevin_coupling_test(field, x0, seed=seed, n_paths=vsec.langevin_paths,
                                            horizon=vsec.langevin_horizon, h=vsec.langevin_h, k=k)
        else:
            raise UsageError(f"unknown test {name!r}; choose from {', '.join(BATTERY)}")
        report.add(e)
    return report


def cmd_verify(args) -> int:
    rc = _base_config(args)
    seed = _seed(args, rc)
    sec = _sim_section(args, rc)
    vsec = replace(rc.verify) if rc is not None else VerifySection()
    field = _load_field(args.field)
    x0 = _x0(sec, field.dim)
    tests = args.only if args.only else (vsec.tests or list(BATTERY))
    unknown = [t for t in tests if t not in BATTERY]
    if unknown:
        raise UsageError(f"unknown test(s) {', '.join(unknown)}; choose from {', '.join(BATTERY)}")
    out = _Outputs(_outdir(args, rc))
    try:
        report = run_battery(field, x0, seed, tests, sec, vsec, rc, args)
        with out.open("report.txt") as fh:
            fh.write(report.to_text())
        with out.open("report.csv") as fh:
            fh.write(report.to_csv())
        out.commit()
    except BaseException:
        out.discard()
        raise
    sys.stdout.write(report.to_text())
    return 0 if report.ok else 1


def cmd_value(args) -> int:
    field = _load_field("exact1d" if args.exact else args.field)
    x = np.asarray(args.x, dtype=float)
    if x.size != field.dim:
        raise UsageError(f"x has dimension {x.size} but the field has dimension {field.dim}")
    if not 0.0 <= args.t < 1.0:
        raise UsageError("t must lie in [0, 1)")
    g, grad, hess = field.eval(x)
    v = value(args.t, field, x)
    S, _ = sigma_star(args.t, x, field)
    lb = lower_bound(args.t, x)
    line = (f"t={f9(args.t)} x={vec9(x)} value={f9(v)} g={f9(g)} grad={vec9(grad)} hess={vec9(hess)} "
            f"sigma_star={vec9(S)} lower_bound={f9(lb)}")
    sys.stdout.write(line + "\n")
    return 0


# ---------------------------------------------------------------------------
# parser

def _common(p, sim: bool = False):
    p.add_argument("--config", help="TOML run configuration (see simplexma.config)")
    p.add_argument("--out", help="output directory (default: config output_dir or ./out)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    if sim:
        p.add_argument("--field", help="field file written by 'solve' ('exact1d' for the closed-form d=1 field)")
        p.add_argument("--seed", type=int, help="master seed (mandatory here or in the config)")
        p.add_argument("--x0", type=_floats, help="start point, comma-separated coordinates")
        p.add_argument("--paths", dest="n_paths", type=int, help="number of paths")
        p.add_argument("--h-u", dest="h_u", type=float, help="step in transformed time u")
        p.add_argument("--U-max", dest="U_max", type=float, help="horizon in transformed time")
        p.add_argument("--g-stop", dest="g_stop", type=float, help="absorption threshold on g (or on w outside the field)")
        p.add_argument("--r-snap", dest="r_snap", type=float, help="vertex snap radius for terminal labels")
        p.add_argument("--absorb-radius", dest="absorb_radius", type=float,
                       help="stop only within this distance of a vertex (0 disables)")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--engine", choices=("numba", "numpy"), help="simulation engine")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simplexma", description="Monge-Ampere solver on the simplex, optimal "
                                 "win-martingale simulation and verification.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the nested Dirichlet problems and write a field file")
    _common(p)
    p.add_argument("--dim", type=int, choices=(1, 2), help="dimension d")
    p.add_argument("--levels", type=_floats, help="strictly increasing sublevel values, e.g. 6,8,10")
    p.add_argument("--h", type=float, help="grid spacing")
    p.add_argument("--tol-res", dest="tol_res", type=float, help="Newton residual tolerance")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="Newton iteration cap per level")
    p.add_argument("--dirichlet", choices=("corrected", "barrier"), help="boundary data")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="simulate optimal or baseline paths")
    _common(p, sim=True)
    p.add_argument("--baseline", choices=("logistic1d", "productLift"), help="simulate a baseline instead")
    p.add_argument("--record", type=int, help="number of leading paths written to paths.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the verification battery")
    _common(p, sim=True)
    p.add_argument("--only", type=lambda s: [t for t in s.split(",") if t], help="comma-separated subset of tests: "
                   + ", ".join(BATTERY))
    p.add_argument("--summary", help="summary.csv of optimal paths to test instead of simulating")
    p.add_argument("--baseline-summary", dest="baseline_summary", help="summary.csv of baseline paths")
    p.add_argument("--baseline", choices=("logistic1d", "productLift"), help="baseline for the gap/intcov tests")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("value", help="value function and related quantities at one (t, x)")
    p.add_argument("--field", help="field file")
    p.add_argument("--exact", action="store_true", help="use the closed-form d=1 solution")
    p.add_argument("--t", type=float, default=0.0, help="time in [0, 1)")
    p.add_argument("--x", type=_floats, required=True, help="point, comma-separated coordinates")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.set_defaults(func=cmd_value)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (UsageError, ConfigError, FieldFormatError, ExtrapolationError, SimplexDomainError,
            diag.InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NewtonDivergence, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    log.info("%s done in %.2f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())

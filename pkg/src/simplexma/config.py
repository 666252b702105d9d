"""Run configuration read from a TOML file.

Schema (every key optional except ``seed``)::

    seed = 7                      # mandatory, non-negative integer
    dim = 1
    output_dir = "out"

    [solve]                       # SolveConfig fields
    levels = [6, 8, 10]
    h = 1e-3
    tol_res = 1e-8
    max_iter = 200
    dirichlet = "corrected"       # or "barrier"

    [simulate]
    x0 = [0.5]
    n_paths = 20000
    h_u = 1e-3
    U_max = 40.0
    g_stop = 8.0
    r_snap = 0.1
    absorb_radius = 0.02
    continuation = true
    trust_level = 8.0
    baseline = "logistic1d"       # or "productLift"; omit for optimal paths
    record = 10                   # number of leading paths written to the path dump
    workers = 1
    engine = "numba"              # or "numpy"

    [verify]
    tests = ["terminal_distribution", "logdet_martingale"]
    k = 3.0
    allowance = 0.02
    censor_ceiling = 0.02
    min_paths = 10000
    radii = [0.05, 0.02, 0.01, 0.005]
    face_point = [0.4]
    langevin_paths = 2000
    langevin_horizon = 2.0
    langevin_h = 1e-3

Unknown keys anywhere are errors.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field as dc_field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .solver import SolveConfig


class ConfigError(ValueError):
    pass


@dataclass
class SimSection:
    x0: list[float] | None = None
    n_paths: int = 20000
    h_u: float = 1e-3
    U_max: float = 40.0
    g_stop: float | None = None
    r_snap: float = 0.1
    absorb_radius: float | None = None
    continuation: bool | None = None
    trust_level: float | None = None
    baseline: str | None = None
    record: int = 10
    workers: int = 1
    engine: str = "numba"


@dataclass
class VerifySection:
    tests: list[str] | None = None
    k: float = 3.0
    allowance: float = 2e-2
    censor_ceiling: float = 0.02
    min_paths: int = 10_000
    radii: list[float] | None = None
    face_point: list[float] | None = None
    langevin_paths: int = 2000
    langevin_horizon: float = 2.0
    langevin_h: float = 1e-3


@dataclass
class RunConfig:
    seed: int
    dim: int = 1
    output_dir: str = "out"
    solve: SolveConfig = dc_field(default_factory=SolveConfig)
    simulate: SimSection = dc_field(default_factory=SimSection)
    verify: VerifySection = dc_field(default_factory=VerifySection)


def _section(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def parse_config(raw: dict) -> RunConfig:
    top = {"seed", "dim", "output_dir", "solve", "simulate", "verify"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    seed = raw.get("seed")
    if seed is None:
        raise ConfigError("seed is mandatory")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    dim = raw.get("dim", 1)
    if dim not in (1, 2):
        raise ConfigError("dim must be 1 or 2")
    return RunConfig(
        seed=seed,
        dim=dim,
        output_dir=str(raw.get("output_dir", "out")),
        solve=_section(SolveConfig, raw.get("solve", {}), "solve"),
        simulate=_section(SimSection, raw.get("simulate", {}), "simulate"),
        verify=_section(VerifySection, raw.get("verify", {}), "verify"),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw)

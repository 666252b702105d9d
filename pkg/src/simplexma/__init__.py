"""Monge-Ampere solver on the probability simplex, simulation of the optimal
win-martingale, and a verification harness."""
from .estimator import MongeAmpereSolver, check_simplex_points
from .fieldio import load_field, save_field
from .sim import PathSample, SimConfig, objective, run_aldous, run_baseline, sigma_star, simulate_aldous, \
    simulate_baseline
from .simplex import SimplexDomainError, SimplexPoint, SublevelSpec, barrier_det_ratio, barrier_w, contains
from .solver import ExactField1D, GradHessField, SolveConfig, SolveReport, exact_g_1d, solve_dirichlet, solve_nested
from .value import ValueQuery, lower_bound, scaling_identity_gap, value

__all__ = [
    "ExactField1D", "GradHessField", "MongeAmpereSolver", "PathSample", "SimConfig", "SimplexDomainError",
    "SimplexPoint", "SolveConfig", "SolveReport", "SublevelSpec", "ValueQuery", "barrier_det_ratio", "barrier_w",
    "check_simplex_points", "contains", "exact_g_1d", "load_field", "lower_bound", "objective", "run_aldous",
    "run_baseline", "save_field", "scaling_identity_gap", "sigma_star", "simulate_aldous", "simulate_baseline",
    "solve_dirichlet", "solve_nested", "value",
]

import numpy as np
import pytest

from simplexma.solver import SolveConfig, solve_nested


@pytest.fixture(scope="session")
def field1():
    """d=1, levels (6, 8, 10), h = 1e-3."""
    f, rep = solve_nested(1, SolveConfig(levels=(6, 8, 10), h=1e-3))
    return f, rep


@pytest.fixture(scope="session")
def field1_deep():
    """d=1 reaching x = 5e-3: levels (6, 8, 10, 12), h = 5e-4."""
    return solve_nested(1, SolveConfig(levels=(6, 8, 10, 12), h=5e-4))[0]


@pytest.fixture(scope="session")
def field2():
    """d=2, levels (8, 10, 12), h = 0.005."""
    f, rep = solve_nested(2, SolveConfig(levels=(8, 10, 12), h=0.005))
    return f, rep


@pytest.fixture(scope="session")
def field2_coarse():
    return solve_nested(2, SolveConfig(levels=(8, 10, 12), h=0.01))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

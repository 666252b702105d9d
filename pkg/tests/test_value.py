import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simplexma.solver import ExactField1D, ExtrapolationError
from simplexma.value import (
    ValueQuery, budget_logdet, covariance_budget, lower_bound, scaling_identity_gap, time_term, value, value_many,
)

EXACT = ExactField1D()


def test_value_examples():
    assert value(0.0, EXACT, [0.5]) == pytest.approx(2 * np.log(np.pi), abs=1e-12)
    t = 0.5
    expect = 0.5 * 2 * np.log(np.pi) + 0.5 * np.log(0.5)
    assert value(ValueQuery(t, [0.5]), EXACT) == pytest.approx(expect)
    assert abs(value(0.999, EXACT, [0.5])) < 1e-2


def test_value_many_matches_scalar():
    X = np.array([[0.1], [0.5], [0.8]])
    t = np.array([0.0, 0.3, 0.9])
    v = value_many(t, EXACT, X)
    for i in range(3):
        assert v[i] == pytest.approx(value(t[i], EXACT, X[i]))


def test_query_validation():
    with pytest.raises(ValueError):
        ValueQuery(1.0, [0.5])
    with pytest.raises(ValueError):
        ValueQuery(-0.1, [0.5])


def test_outside_field_raises(field1):
    f, _ = field1
    with pytest.raises(ExtrapolationError):
        value(0.0, f, [1e-5])


def test_time_term_limits():
    assert time_term(0.0, 2) == 0.0
    assert time_term(1.0, 2) == 0.0
    assert time_term(0.5, 1) == pytest.approx(0.5 * np.log(0.5))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 0.999), st.floats(0, 0.999), st.floats(0.01, 0.99))
def test_scaling_identity_property(t, s, x):
    assert scaling_identity_gap(t, s, [x], EXACT) <= 1e-12


def test_covariance_budget():
    x = np.array([0.2, 0.5])
    B = covariance_budget(x)
    np.testing.assert_allclose(B, [[0.16, -0.1], [-0.1, 0.25]])
    assert budget_logdet(x) == pytest.approx(np.log(0.16 * 0.25 - 0.01))
    assert budget_logdet(np.array([0.5, 0.5])) == -np.inf


def test_lower_bound_below_value(field2):
    f, _ = field2
    for x in ([0.2, 0.5], [1 / 3, 1 / 3], [0.1, 0.1]):
        for t in (0.0, 0.5, 0.9):
            assert lower_bound(t, x) <= value(t, f, x) + 1e-12
    assert lower_bound(0.0, [0.0, 0.5]) == np.inf
    assert lower_bound(0.0, [0.5]) == pytest.approx(-np.log(0.25))

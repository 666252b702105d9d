import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from simplexma import MongeAmpereSolver, check_simplex_points, exact_g_1d
from simplexma.solver import ExtrapolationError


@pytest.fixture(scope="module")
def fitted():
    return MongeAmpereSolver(dim=1, levels=(6, 8), h=2e-3).fit()


def test_fit_and_predict(fitted):
    x = np.array([[0.2], [0.5], [0.7]])
    np.testing.assert_allclose(fitted.predict(x), exact_g_1d(x[:, 0])[0], atol=1e-2)
    assert fitted.gradient(x).shape == (3, 1)
    assert fitted.hessian(x).shape == (3, 1, 1)
    assert fitted.value(0.0, [[0.5]])[0] == pytest.approx(2 * np.log(np.pi), abs=1e-2)
    assert fitted.level_ == 8 and fitted.n_features_in_ == 1


def test_unfitted_and_params():
    est = MongeAmpereSolver(dim=2, h=0.01)
    with pytest.raises(NotFittedError):
        est.predict([[0.2, 0.3]])
    c = clone(est)
    assert c.get_params()["h"] == 0.01 and c.get_params()["dim"] == 2
    with pytest.raises(ValueError):
        MongeAmpereSolver(dim=4).fit()


def test_point_checks(fitted):
    with pytest.raises(ValueError):
        check_simplex_points([[0.5, 0.6]])
    with pytest.raises(ValueError):
        check_simplex_points([[0.2, 0.3]], dim=1)
    assert check_simplex_points([0.1, 0.2]).shape == (2, 1)
    assert check_simplex_points([0.1, 0.2], dim=2).shape == (1, 2)
    with pytest.raises(ExtrapolationError):
        fitted.predict([[1e-4]])

import io
from dataclasses import replace

import numpy as np
import pytest

from simplexma import diagnostics as diag
from simplexma.sim import PathSample, SimConfig, read_summary, run_aldous, run_baseline, write_summary
from simplexma.solver import ExactField1D, ExtrapolationError

EXACT = ExactField1D()
TARGET = 2 * np.log(np.pi)


@pytest.fixture(scope="module")
def ens1():
    return run_aldous([0.5], EXACT, SimConfig(seed=3, n_paths=3000, record=tuple(range(200))))


def _fake(x0, labels):
    """Ensemble carrying only the fields the label tests read."""
    ens = run_baseline("logistic1d", [0.5], SimConfig(seed=0, n_paths=1))
    x = np.asarray(x0, dtype=float)
    n = len(labels)
    return replace(ens, x0=x, label=np.asarray(labels, dtype=np.int64), path_index=np.arange(n))


def _labels(p, n):
    counts = np.round(np.asarray(p) * n).astype(int)
    return np.repeat(np.arange(len(p)), counts)


def test_terminal_distribution_expected_probabilities():
    e = diag.terminal_distribution_test(_fake([0.9], _labels([0.1, 0.9], 20000)), min_paths=100)
    np.testing.assert_allclose(e.details["expected"], [0.1, 0.9])
    assert e.passed
    x = [1 / 3, 1 / 3]
    e = diag.terminal_distribution_test(_fake(x, _labels([1 / 3] * 3, 30000)), min_paths=100)
    np.testing.assert_allclose(e.details["expected"], [1 / 3] * 3)
    assert e.passed


def test_terminal_distribution_tampered_labels_fail():
    lab = _labels([0.5, 0.5], 20000)
    lab[:600] = 1
    e = diag.terminal_distribution_test(_fake([0.5], lab), min_paths=100)
    assert e.status == diag.FAIL


def test_terminal_distribution_insufficient():
    with pytest.raises(diag.InsufficientDataError):
        diag.terminal_distribution_test(_fake([0.5], [0, 1] * 10))
    # censored paths do not count
    lab = np.r_[np.zeros(50), np.ones(50), -np.ones(1000)]
    with pytest.raises(diag.InsufficientDataError):
        diag.terminal_distribution_test(_fake([0.5], lab), min_paths=200)


def test_censoring():
    e = diag.censoring_test(_fake([0.5], [0] * 97 + [-1] * 3), ceiling=0.02)
    assert e.statistic == pytest.approx(0.03) and e.status == diag.FAIL
    assert diag.censoring_test(_fake([0.5], [0] * 99 + [-1]), ceiling=0.02).passed


def test_logdet_martingale_on_simulated_paths(ens1):
    e = diag.logdet_martingale_test(ens1, EXACT)
    assert e.passed, e.details
    # recorded paths give the same kind of answer through the path route
    paths = [ens1.paths[i] for i in sorted(ens1.paths)]
    e2 = diag.logdet_martingale_test(paths, EXACT)
    assert e2.n == 200
    assert e2.status == diag.PASS


def test_logdet_increment_zero_at_time_zero(ens1):
    paths = [ens1.paths[i] for i in range(5)]
    inc = diag._logdet_increments(paths, EXACT, [0.0])
    np.testing.assert_array_equal(inc, 0.0)


def test_logdet_negative_control_constant_path():
    u = np.linspace(0.0, 10.0, 1001)
    paths = [PathSample("aldous", u, np.full((u.size, 1), 0.5), np.ones((u.size - 1, 1, 1)), 0, path_index=i)
             for i in range(20)]
    e = diag.logdet_martingale_test(paths, EXACT)
    assert e.status == diag.FAIL


def test_logdet_rejects_baseline():
    ens = run_baseline("logistic1d", [0.5], SimConfig(seed=1, n_paths=4, record=(0, 1)))
    with pytest.raises(ValueError):
        diag.logdet_martingale_test(ens, EXACT)
    with pytest.raises(ValueError):
        diag.logdet_martingale_test(list(ens.paths.values()), EXACT)


def test_objective_vs_value_and_baseline_gap(ens1):
    e = diag.objective_vs_value_test(ens1, EXACT, allowance=2e-2)
    assert e.details["target"] == pytest.approx(TARGET)
    assert e.details["in_sandwich"]
    assert e.passed
    base = run_baseline("logistic1d", [0.5], SimConfig(seed=3, n_paths=3000))
    assert diag.baseline_gap_test(base, TARGET).passed
    # the optimal paths themselves show no gap
    assert not diag.baseline_gap_test(ens1, TARGET).passed
    # a wrong target is caught
    assert not diag.objective_vs_value_test(ens1, EXACT, target=TARGET + 0.2).passed


def test_intcov(ens1):
    e = diag.intcov_test(ens1)
    assert e.name == "intcov_aldous"
    np.testing.assert_allclose(e.details["target"], [0.25])
    assert e.passed
    bad = replace(ens1, intcov=ens1.intcov * 1.2)
    assert not diag.intcov_test(bad).passed


def test_recomputable_from_summary(ens1):
    buf = io.StringIO()
    write_summary(buf, ens1)
    buf.seek(0)
    back = read_summary(buf, "aldous", ens1.x0, ens1.config, ens1.g_stop, ens1.trust_level)
    for fn in (lambda e: diag.terminal_distribution_test(e, min_paths=1000),
               lambda e: diag.logdet_martingale_test(e, EXACT),
               lambda e: diag.objective_vs_value_test(e, EXACT),
               diag.intcov_test, diag.censoring_test):
        a, b = fn(ens1), fn(back)
        assert a.record() == b.record()
        assert a.statistic == b.statistic


def test_boundary_scan_exact_1d():
    e = diag.boundary_hessian_scan(EXACT, radii=(0.05, 0.02, 0.01, 0.005))
    assert e.passed
    assert e.details["limit_rel_error"] < 1e-3


def test_boundary_scan_outside_region(field1):
    f, _ = field1
    with pytest.raises(ExtrapolationError):
        diag.boundary_hessian_scan(f, radii=(0.05, 1e-4))


def test_gradient_form_1d(field1):
    f, _ = field1
    e = diag.gradient_form_scan(f, expected=2.0)
    assert e.passed, e.details
    with pytest.raises(TypeError):
        diag.gradient_form_sup(EXACT)


def test_langevin_controls():
    e = diag.langevin_coupling_test(EXACT, [0.5], seed=1, n_paths=500, horizon=1.0)
    assert e.passed, e.details
    e = diag.langevin_coupling_test(EXACT, [0.5], seed=1, n_paths=500, horizon=1.0, remove_drift=True)
    assert e.status == diag.FAIL
    assert abs(e.statistic) < 0.5
    e = diag.langevin_coupling_test(EXACT, [0.5], seed=1, horizon=0.0)
    assert e.status == diag.INSUFFICIENT
    rep = diag.McReport([e])
    assert not rep.ok


def test_report_format():
    rep = diag.McReport(seed=5, config={"a": 1})
    rep.add(diag.McEntry("x", 1 / 3, 0.01, 0.03, diag.PASS, 10, {"v": np.array([0.1, 2.0])}))
    rep.add(diag.McEntry("note", 2.0, None, None, diag.INFO))
    assert rep.ok
    text = rep.to_text()
    assert "statistic=0.333333333\n" in text and "se=0.01\n" in text and "v=[0.1,2]\n" in text
    assert text.startswith("seed=5\n")
    assert rep.to_csv().splitlines() == ["test,status,statistic,se,threshold,n", "x,pass,0.333333333,0.01,0.03,10",
                                         "note,info,2,na,na,0"]
    assert rep["x"].n == 10
    rep.add(diag.McEntry("y", 0.0, 0.0, 0.0, diag.FAIL))
    assert not rep.ok


def test_record_keys_unique(ens1):
    for e in (diag.logdet_martingale_test(ens1, EXACT), diag.intcov_test(ens1),
              diag.langevin_coupling_test(EXACT, [0.5], seed=1, n_paths=50, horizon=0.1)):
        keys = [k for k, _ in e.record()]
        assert len(keys) == len(set(keys))
    with pytest.raises(ValueError):
        diag.McEntry("x", 0.0, None, None, diag.INFO, details={"status": 1}).record()

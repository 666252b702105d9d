import numpy as np
import pytest

from simplexma.fieldio import FieldFormatError, dumps, load_field, loads, save_field
from simplexma.simplex import SimplexDomainError, barrier_w, vertex_swap
from simplexma.solver import (
    ExactField1D, ExtrapolationError, GradHessField, GridError, SolveConfig, build_grid, exact_g_1d, fd_hessian,
    residual, sandwich_violations, solve_dirichlet, solve_nested, stencil_offsets,
)


def test_exact_1d_examples():
    g, g1, g2 = exact_g_1d(0.5)
    assert g == pytest.approx(2 * np.log(np.pi))
    assert g == pytest.approx(2.289459, abs=1e-6)
    assert g1 == pytest.approx(0.0, abs=1e-12)
    assert g2 == pytest.approx(2 * np.pi**2)
    assert exact_g_1d(0.25)[0] == pytest.approx(2.982607, abs=1e-6)
    x = np.linspace(0.01, 0.99, 50)
    g, _, g2 = exact_g_1d(x)
    np.testing.assert_allclose(g, np.log(0.5 * g2), rtol=1e-13)
    with pytest.raises(SimplexDomainError):
        exact_g_1d(0.0)


def test_exact_field_api():
    f = ExactField1D()
    g, grad, H, ok = f.eval_many([[0.5], [1.5]])
    assert ok.tolist() == [True, False]
    assert np.isnan(g[1])
    with pytest.raises(ExtrapolationError):
        f.eval([1.0])


def test_grid_errors():
    with pytest.raises(GridError):
        build_grid(1, 2.5, 1e-3)  # empty sublevel set
    with pytest.raises(GridError):
        build_grid(1, 8.0, 0.3)  # not 1/integer
    with pytest.raises(GridError):
        build_grid(2, 8.0, 0.25)  # too coarse


def test_grid_layer_flags():
    grid = build_grid(1, 6.0, 1e-2)
    w = barrier_w(grid.coords)
    np.testing.assert_array_equal(grid.interior, w < 6.0)
    assert (~grid.interior).sum() == 2


@pytest.mark.parametrize("mixed", ["skew", "cross"])
def test_stencils_exact_on_quadratics(mixed):
    # both mixed-derivative stencils differentiate quadratics exactly
    d = 2
    rng = np.random.default_rng(0)
    A = rng.normal(size=(d, d))
    Q = A @ A.T
    n = 40
    x0 = np.array([10, 12])
    acc = np.zeros((d, d))
    for off, wgt, a, b in stencil_offsets(d, mixed):
        y = (x0 + off) / n
        acc[a, b] += wgt * n**2 * 0.5 * y @ Q @ y
    acc[1, 0] = acc[0, 1]
    np.testing.assert_allclose(acc, Q, atol=1e-9)


def test_skew_stencil_neighbours_keep_sum_for_mixed_terms():
    for off, _, a, b in stencil_offsets(2, "skew"):
        if a != b and np.abs(off).sum() == 2:
            assert off.sum() == 0


def test_fd_hessian_of_barrier_is_second_order():
    errs = []
    for h in (2e-3, 1e-3):
        grid = build_grid(1, 6.0, h)
        w = barrier_w(grid.coords)
        D = fd_hessian(grid, w)[:, 0, 0]
        x = grid.coords[grid.interior, 0]
        errs.append(np.max(np.abs(D / (2 / x**2 + 2 / (1 - x) ** 2) - 1)))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_solve_1d_accuracy_and_report(field1):
    f, rep = field1
    x = f.nodes[:, 0]
    err = np.max(np.abs(f.node_values - exact_g_1d(x)[0]))
    assert err <= 5e-3
    assert rep.sandwich_violations == 0 == sandwich_violations(f.base)
    assert rep.final_residual == residual(f)
    assert rep.final_residual <= 1e-8
    assert len(rep.stabilization) == 2 and rep.stabilization[1] < rep.stabilization[0]


@pytest.mark.parametrize("init", ["subsolution", "supersolution", "corrected"])
def test_1d_solution_independent_of_init(init):
    grid = build_grid(1, 8.0, 2e-3)
    ref, _ = solve_dirichlet(grid, "corrected")
    sf, rep = solve_dirichlet(grid, init)
    np.testing.assert_allclose(sf.values, ref.values, atol=1e-9)


def test_2d_solution_independent_of_init():
    grid = build_grid(2, 12.0, 0.01)
    cfg = SolveConfig(levels=(12.0,), h=0.01, dirichlet="barrier")
    lo, _ = solve_dirichlet(grid, "subsolution", cfg)
    hi, _ = solve_dirichlet(grid, "supersolution", cfg)
    np.testing.assert_allclose(lo.values, hi.values, atol=1e-8)


def test_2d_field_properties(field2):
    f, rep = field2
    assert rep.sandwich_violations == 0
    g = f.eval([1 / 3, 1 / 3])[0]
    assert 5 * np.log(3) <= g <= 6 * np.log(3)
    # vertex swaps map the grid to itself, so the discrete solution is symmetric
    nodes = f.nodes
    for i in (1, 2):
        sw = vertex_swap(nodes, i)
        v = f.value_at_nodes_or_interp(sw)
        np.testing.assert_allclose(v, f.node_values, atol=1e-7)


def test_2d_hessians_symmetric_positive(field2, rng):
    f, _ = field2
    p = rng.dirichlet(np.ones(3), size=4000)[:, 1:]
    _, _, H, ok = f.eval_many(p)
    H = H[ok]
    assert H.shape[0] > 1000
    np.testing.assert_array_equal(H, np.swapaxes(H, 1, 2))
    assert np.all(np.linalg.eigvalsh(H)[:, 0] > 0)


def test_extrapolation_is_an_error(field1):
    f, _ = field1
    assert not f.contains([[1e-4]])[0]
    with pytest.raises(ExtrapolationError):
        f.eval([1e-4])


def test_levels_must_increase():
    with pytest.raises(ValueError):
        SolveConfig(levels=(8, 6))
    with pytest.raises(ValueError):
        SolveConfig(levels=(6, 8), h=(1e-3,))


def test_field_file_roundtrip(tmp_path, field1):
    f, _ = field1
    p = tmp_path / "f.mafg"
    save_field(f, p)
    g = load_field(p)
    X = np.linspace(0.02, 0.98, 101)[:, None]
    for a, b in zip(f.eval_many(X), g.eval_many(X)):
        np.testing.assert_array_equal(a, b)
    assert dumps(g) == p.read_bytes()


def test_field_file_corruption(field1):
    f, _ = field1
    blob = bytearray(dumps(f))
    with pytest.raises(FieldFormatError):
        loads(bytes(blob[:10]))
    bad = blob.copy()
    bad[0:4] = b"XXXX"
    with pytest.raises(FieldFormatError, match="magic"):
        loads(bytes(bad))
    bad = blob.copy()
    bad[100] ^= 0xFF
    with pytest.raises(FieldFormatError, match="CRC"):
        loads(bytes(bad))
    with pytest.raises(FieldFormatError, match="size"):
        loads(bytes(blob + b"\0"))


def test_nested_warm_start_matches_direct_solve():
    f, _ = solve_nested(1, SolveConfig(levels=(6, 8), h=2e-3))
    direct, _ = solve_dirichlet(build_grid(1, 8.0, 2e-3))
    np.testing.assert_allclose(f.base.values, direct.values, atol=1e-9)
    assert isinstance(f, GradHessField)


@pytest.mark.xfail(strict=True, reason="the change between levels 10 and 12 at the centroid is about 0.015; "
                   "it shrinks with the level (about 0.005 between 12 and 14) but not with h")
def test_2d_centroid_stabilizes_between_last_levels():
    x = np.array([[1 / 3, 1 / 3]])
    a, _ = solve_nested(2, SolveConfig(levels=(8, 10), h=0.005))
    b, _ = solve_nested(2, SolveConfig(levels=(8, 10, 12), h=0.005))
    assert abs(a.eval_many(x, what="g")[0][0] - b.eval_many(x, what="g")[0][0]) < 1e-2


def test_2d_fine_grid_nested_solve():
    # warm starts alone used to stall here
    f, rep = solve_nested(2, SolveConfig(levels=(8, 10), h=0.0025))
    assert rep.final_residual <= 1e-8 and rep.sandwich_violations == 0
    assert rep.stabilization[0] > 0

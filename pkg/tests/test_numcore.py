import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose

from homoplate import numcore
from homoplate.errors import NumericalFailure


@pytest.mark.parametrize("i,j", [(0, 0), (1, 0), (2, 1), (3, 3), (0, 6), (4, 2)])
def test_triangle12_exact_to_degree_six(i, j):
    rule = numcore.TRIANGLE12
    assert len(rule) == 12
    approx = rule.weights @ (rule.points[:, 0] ** i * rule.points[:, 1] ** j)
    assert approx == pytest.approx(numcore.triangle_monomial_integral(i, j), rel=1e-14)


def test_triangle12_not_exact_at_degree_eight():
    rule = numcore.TRIANGLE12
    approx = rule.weights @ (rule.points[:, 0] ** 8)
    assert abs(approx - numcore.triangle_monomial_integral(8, 0)) > 1e-8


def test_hex_rule_integrates_quintic():
    rule = numcore.hex_rule()
    assert len(rule) == 27
    p = rule.points
    val = rule.weights @ (p[:, 0] ** 5 * p[:, 1] ** 2 * p[:, 2])
    assert val == pytest.approx(1.0 / 6 / 3 / 2, rel=1e-14)


def test_voigt_round_trip():
    A = np.array([[1.5, -0.25], [-0.25, 2.0]])
    v = numcore.sym_to_voigt(A)
    assert_allclose(v, [1.5, 2.0, -0.5])
    assert_allclose(numcore.voigt_to_sym(v), A)


def test_relative_residual_zero_for_exact_solution():
    A = sp.csr_matrix(np.array([[4.0, 1.0], [1.0, 3.0]]))
    x = np.array([1.0, -2.0])
    assert numcore.relative_residual(A, x, A @ x) == 0.0


def _saddle(n=30, m=8, seed=0):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    W = M @ M.T + n * np.eye(n)
    J = rng.normal(size=(m, n))
    K = np.block([[W, J.T], [J, np.zeros((m, m))]])
    return sp.csc_matrix(K), n, m


def test_indefinite_solve_reports_inertia():
    K, n, m = _saddle()
    b = np.arange(n + m, dtype=float)
    x, inertia = numcore.solve_sym_indefinite(K, b)
    assert numcore.relative_residual(K, x, b) < 1e-14
    assert inertia.as_tuple() == (n, m, 0)


def test_inertia_unchanged_by_badly_scaled_rows():
    K, n, m = _saddle(seed=3)
    d = 10.0 ** np.linspace(-3, 3, n + m)
    D = sp.diags(d)
    Ks = (D @ K @ D).tocsc()
    _, inertia = numcore.solve_sym_indefinite(Ks, np.ones(n + m))
    assert inertia.as_tuple() == (n, m, 0)


def test_singular_matrix_raises():
    K = sp.csc_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(NumericalFailure):
        numcore.solve_sym_indefinite(K, np.ones(2))


def test_spd_direct_and_cg_agree():
    n = 40
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    A = sp.diags([off, main, off], [-1, 0, 1], format="csc")
    b = np.sin(np.arange(n))
    x1 = numcore.solve_spd(A, b)
    x2 = numcore.solve_spd(A, b, method="cg")
    assert_allclose(x1, x2, rtol=1e-9, atol=1e-9)


def test_factor_spd_rejects_indefinite():
    A = sp.csc_matrix(np.diag([1.0, -1.0, 2.0]))
    with pytest.raises(NumericalFailure):
        numcore.factor_spd(A)


def test_rng_is_reproducible():
    a = numcore.make_rng(7).uniform(size=5)
    b = numcore.make_rng(7).uniform(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, numcore.make_rng(8).uniform(size=5))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castpanel.errors import ConditioningError, DimensionError, DomainError, InputError, RankInfeasibleError
from castpanel.fourblock import (
    FourBlockFit,
    FourBlockProblem,
    ResidualMatrix,
    bilinear_point,
    bilinear_variance,
    cell_ci,
    cell_variance,
    column_bilinear_variances,
    estimate_residuals,
    four_block_conf,
    four_block_estimate,
    oracle_cell_variance,
    oracle_variance_grid,
    variance_grid,
)

import reference
from conftest import low_rank


def fit_of(Y, N1, T1, r):
    p = FourBlockProblem.from_matrix(Y, N1, T1)
    fit = four_block_estimate(p, r)
    return p, fit, estimate_residuals(p, fit)


def test_ones_rank_one_exact():
    _, fit, _ = fit_of(np.ones((4, 4)), 2, 2, 1)
    np.testing.assert_allclose(fit.M_hat_d, np.ones((2, 2)), atol=1e-14)


def test_rank_two_exact():
    u, w = np.array([1.0, 2, 3, 4]), np.array([1.0, 0, -1, 2])
    v, z = np.array([1.0, 1, 1]), np.array([0.0, 1, 2])
    M = np.outer(u, v) + np.outer(w, z)
    _, fit, res = fit_of(M, 2, 2, 2)
    np.testing.assert_allclose(fit.M_hat_d, M[2:, 2:], atol=1e-10)
    for block in (res.E_a, res.E_b, res.E_c):
        np.testing.assert_allclose(block, 0, atol=1e-10)


def test_matches_reference(noisy_instance):
    Y, _, N1, T1, r = noisy_instance
    p, fit, res = fit_of(Y, N1, T1, r)
    ref = reference.four_block(Y, N1, T1, r)
    np.testing.assert_allclose(fit.M_hat_d, ref["M_d"], atol=1e-8)
    np.testing.assert_allclose(fit.M_hat_b, ref["M_b"], atol=1e-8)
    np.testing.assert_allclose(res.E_a, ref["E"][:N1, :T1], atol=1e-8)
    np.testing.assert_allclose(res.E_b, ref["E"][:N1, T1:], atol=1e-8)
    np.testing.assert_allclose(res.E_c, ref["E"][N1:, :T1], atol=1e-8)
    grid = variance_grid(fit, res)
    for i in range(N1, 40, 7):
        for t in range(T1, 30, 3):
            expected = reference.gamma_hat(ref["U"], ref["V"], ref["E"], N1, T1, i, t)
            assert cell_variance(fit, res, i, t) == pytest.approx(expected, rel=1e-8, abs=1e-12)
            assert grid[i - N1, t - T1] == pytest.approx(expected, rel=1e-8, abs=1e-12)


def test_residual_identities(noisy_instance):
    Y, _, N1, T1, r = noisy_instance
    p, fit, res = fit_of(Y, N1, T1, r)
    assert np.array_equal(res.E_b, p.Y_b - fit.M_hat_b)
    assert np.array_equal(np.vstack([res.E_a, res.E_c]), p.left - fit.left_reconstruction)


def test_noiseless_variance_zero():
    M = low_rank(np.random.default_rng(1), 12, 10, 2)
    _, fit, res = fit_of(M, 6, 5, 2)
    np.testing.assert_allclose(variance_grid(fit, res), 0, atol=1e-20)


@pytest.mark.parametrize("c", [3.0, -0.5])
def test_scale_equivariance(noisy_instance, c):
    Y, _, N1, T1, r = noisy_instance
    _, fit, res = fit_of(Y, N1, T1, r)
    _, fit_c, res_c = fit_of(c * Y, N1, T1, r)
    np.testing.assert_allclose(fit_c.M_hat_d, c * fit.M_hat_d, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(res_c.E_b, c * res.E_b, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(variance_grid(fit_c, res_c), c ** 2 * variance_grid(fit, res), rtol=1e-8)


def test_basis_invariance(noisy_instance):
    """Re-mixing the singular vectors leaves the imputation and variances unchanged."""
    Y, _, N1, T1, r = noisy_instance
    p, fit, res = fit_of(Y, N1, T1, r)
    R, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((r, r)))
    U = fit.U_hat @ R
    V = fit.V_hat @ R.T
    mixed = FourBlockFit(
        M_hat_d=U[N1:] @ np.linalg.solve(U[:N1].T @ U[:N1], U[:N1].T @ fit.M_hat_b),
        M_hat_b=fit.M_hat_b,
        U_hat=U,
        V_hat=V,
        left_reconstruction=fit.left_reconstruction,
        rank=r,
        N1=N1,
        T1=T1,
        left_singular_values=fit.left_singular_values,
        upper_singular_values=fit.upper_singular_values,
    )
    np.testing.assert_allclose(mixed.M_hat_d, fit.M_hat_d, atol=1e-9)
    np.testing.assert_allclose(variance_grid(mixed, res), variance_grid(fit, res), atol=1e-9)


def test_hand_sized_variance():
    """Fixed factors and residuals on a 3x3 panel with N1 = T1 = 2."""
    U = np.array([[1.0], [2.0], [0.5]])
    V = np.array([[1.0], [-1.0], [3.0]])
    E_a = np.array([[0.1, -0.2], [0.3, 0.0]])
    E_b = np.array([[0.4], [-0.1]])
    E_c = np.array([[0.2, 0.5]])
    fit = FourBlockFit(np.zeros((1, 1)), np.zeros((2, 1)), U, V, np.zeros((3, 2)), 1, 2, 2, np.ones(1), np.ones(1))
    res = ResidualMatrix(E_a, E_b, E_c)
    E = np.full((3, 3), np.nan)
    E[:2, :2], E[:2, 2:], E[2:, :2] = E_a, E_b, E_c
    # U1'U1 = 5, so weights U_2 U_k / 5 = 0.5 * (1, 2) / 5; V1'V1 = 2, weights 3 * (1, -1) / 2
    by_hand = 0.4 ** 2 * 0.1 ** 2 + 0.1 ** 2 * 0.2 ** 2 + 0.2 ** 2 * 1.5 ** 2 + 0.5 ** 2 * 1.5 ** 2
    assert cell_variance(fit, res, 2, 2) == pytest.approx(by_hand, abs=1e-12)
    assert reference.gamma_hat(U, V, E, 2, 2, 2, 2) == pytest.approx(by_hand, abs=1e-12)


def test_cell_variance_domain(noisy_instance):
    Y, _, N1, T1, r = noisy_instance
    _, fit, res = fit_of(Y, N1, T1, r)
    with pytest.raises(DomainError):
        cell_variance(fit, res, 0, T1)
    with pytest.raises(DomainError):
        cell_variance(fit, res, N1, T1 - 1)


def test_rank_and_conditioning_errors():
    Y = np.random.default_rng(0).standard_normal((6, 6))
    with pytest.raises(RankInfeasibleError):
        four_block_estimate(FourBlockProblem.from_matrix(Y, 2, 3), 3)
    # top rows carry no weight on the second left singular direction
    Y = np.zeros((6, 4))
    Y[:2, :2] = [[1, 2], [2, 4]]
    Y[2:, :2] = [[0, 1], [1, 0], [0, 3], [5, 0]]
    Y[:2, 2:] = [[1, 1], [2, 2]]
    with pytest.raises(ConditioningError, match="U1'U1"):
        four_block_estimate(FourBlockProblem.from_matrix(Y, 2, 2), 2, label="(2,2)")


def test_problem_validation():
    with pytest.raises(DimensionError):
        FourBlockProblem(np.ones((2, 2)), np.ones((3, 1)), np.ones((1, 2)))
    with pytest.raises(InputError):
        FourBlockProblem(np.ones((2, 2)), np.full((2, 1), np.inf), np.ones((1, 2)))


def test_cell_ci_examples():
    ci = cell_ci(0.0, 1.0, 0.05)
    assert ci.lower == pytest.approx(-1.95996, abs=1e-4) and ci.upper == pytest.approx(1.95996, abs=1e-4)
    deg = cell_ci(2.5, 0.0, 0.05)
    assert deg.lower == deg.upper == 2.5
    assert cell_ci(0, 1, 0.9999).width < cell_ci(0, 1, 0.05).width
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(InputError):
            cell_ci(0.0, 1.0, bad)


@given(point=st.floats(-1e6, 1e6), var=st.floats(0, 1e6), alpha=st.floats(1e-6, 1 - 1e-6))
def test_cell_ci_invariants(point, var, alpha):
    ci = cell_ci(point, var, alpha)
    assert ci.lower <= ci.point <= ci.upper
    from scipy.stats import norm

    assert ci.width == pytest.approx(2 * norm.ppf(1 - alpha / 2) * np.sqrt(var), rel=1e-9, abs=1e-9)


def test_bilinear_point(noisy_instance):
    Y, _, N1, T1, r = noisy_instance
    _, fit, _ = fit_of(Y, N1, T1, r)
    N2, T2 = fit.N2, fit.T2
    assert bilinear_point(fit, np.eye(N2)[3], np.eye(T2)[4]) == fit.M_hat_d[3, 4]
    assert bilinear_point(fit, np.zeros(N2), np.ones(T2)) == 0.0
    col_mean = sum(fit.M_hat_d[j, 5] for j in range(N2)) / N2
    assert bilinear_point(fit, np.ones(N2) / N2, np.eye(T2)[5]) == pytest.approx(col_mean, abs=1e-12)
    with pytest.raises(DimensionError):
        bilinear_point(fit, np.ones(N2 + 1), np.ones(T2))


def test_bilinear_canonical_reduction(noisy_instance):
    Y, _, N1, T1, r = noisy_instance
    _, fit, res = fit_of(Y, N1, T1, r)
    for j in range(fit.N2):
        for s in range(fit.T2):
            bv = bilinear_variance(fit, res, np.eye(fit.N2)[j], np.eye(fit.T2)[s])
            assert bv == pytest.approx(cell_variance(fit, res, N1 + j, T1 + s), rel=1e-12, abs=1e-15)


def test_bilinear_matches_quadruple_loop(noisy_instance):
    Y, _, N1, T1, r = noisy_instance
    _, fit, res = fit_of(Y, N1, T1, r)
    ref = reference.four_block(Y, N1, T1, r)
    g = np.random.default_rng(11)
    for c1, c2 in [(np.ones(fit.N2), np.ones(fit.T2)), (g.standard_normal(fit.N2), g.standard_normal(fit.T2))]:
        expected = reference.gamma_hat_bilinear(ref["U"], ref["V"], ref["E"], N1, T1, c1, c2)
        assert bilinear_variance(fit, res, c1, c2) == pytest.approx(expected, rel=1e-10)


def test_column_bilinear_variances(noisy_instance):
    Y, _, N1, T1, r = noisy_instance
    _, fit, res = fit_of(Y, N1, T1, r)
    c1 = np.random.default_rng(5).standard_normal(fit.N2)
    cols = column_bilinear_variances(fit, res, c1)
    for s in range(fit.T2):
        assert cols[s] == pytest.approx(bilinear_variance(fit, res, c1, np.eye(fit.T2)[s]), rel=1e-12)


def test_bilinear_noiseless_zero():
    M = low_rank(np.random.default_rng(9), 10, 8, 2)
    _, fit, res = fit_of(M, 5, 4, 2)
    assert bilinear_variance(fit, res, np.ones(5), np.ones(4)) == pytest.approx(0, abs=1e-18)


def test_four_block_conf_consistent(noisy_instance):
    Y, _, N1, T1, r = noisy_instance
    p, fit, res = fit_of(Y, N1, T1, r)
    inf = four_block_conf(p, r, 0.1)
    for i, t in [(0, 0), (5, 3), (19, 9)]:
        ci = cell_ci(fit.M_hat_d[i, t], cell_variance(fit, res, N1 + i, T1 + t), 0.1)
        assert inf.lower[i, t] == pytest.approx(ci.lower, abs=1e-12)
        assert inf.upper[i, t] == pytest.approx(ci.upper, abs=1e-12)


# oracle variance


def test_oracle_zero_noise():
    U = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 2)))[0]
    V = np.linalg.qr(np.random.default_rng(1).standard_normal((5, 2)))[0]
    assert oracle_cell_variance(U, V, np.zeros((6, 5)), 3, 2, 4, 3) == 0.0


@pytest.mark.parametrize("N, T, N1, T1, s0", [(6, 5, 3, 2, 0.7), (10, 12, 4, 9, 2.0)])
def test_oracle_constant_factor(N, T, N1, T1, s0):
    U = np.ones((N, 1)) / np.sqrt(N)
    V = np.ones((T, 1)) / np.sqrt(T)
    sigma = np.full((N, T), s0)
    # loop oracle: every projection weight is 1/N1 (rows) or 1/T1 (columns)
    loop = sum(s0 ** 2 * (1 / N1) ** 2 for _ in range(N1)) + sum(s0 ** 2 * (1 / T1) ** 2 for _ in range(T1))
    expected = s0 ** 2 * (1 / N1 + 1 / T1)
    assert loop == pytest.approx(expected)
    assert oracle_cell_variance(U, V, sigma, N1, T1, N - 1, T - 1) == pytest.approx(expected, rel=1e-12)


def test_oracle_grid_matches_cells():
    g = np.random.default_rng(3)
    U = np.linalg.qr(g.standard_normal((9, 2)))[0]
    V = np.linalg.qr(g.standard_normal((8, 2)))[0]
    sigma = g.uniform(0.5, 2, (9, 8))
    grid = oracle_variance_grid(U, V, sigma, 5, 4)
    for i in range(5, 9):
        for t in range(4, 8):
            assert grid[i - 5, t - 4] == pytest.approx(oracle_cell_variance(U, V, sigma, 5, 4, i, t), rel=1e-12)
    with pytest.raises(DomainError):
        oracle_cell_variance(U, V, sigma, 5, 4, 2, 6)


def test_oracle_matches_monte_carlo_variance_of_leading_term():
    """Simulated variance of the linear error term against the closed form."""
    g = np.random.default_rng(12)
    N, T, N1, T1, r = 30, 24, 15, 12, 2
    U = np.linalg.qr(g.standard_normal((N, r)))[0]
    V = np.linalg.qr(g.standard_normal((T, r)))[0]
    s0 = 0.8
    sigma = np.full((N, T), s0)
    i, t = 20, 17
    a = U[i] @ np.linalg.inv(U[:N1].T @ U[:N1]) @ U[:N1].T  # weights on E_b[:, t]
    b = V[t] @ np.linalg.inv(V[:T1].T @ V[:T1]) @ V[:T1].T  # weights on E_c[i, :]
    draws = 100_000
    Eb = s0 * g.standard_normal((draws, N1))
    Ec = s0 * g.standard_normal((draws, T1))
    Z = Eb @ a + Ec @ b
    assert Z.var() == pytest.approx(oracle_cell_variance(U, V, sigma, N1, T1, i, t), rel=0.03)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), r=st.integers(1, 3), data=st.data())
def test_noiseless_exactness_property(seed, r, data):
    g = np.random.default_rng(seed)
    N1 = data.draw(st.integers(r + 1, 12))
    T1 = data.draw(st.integers(r + 1, 12))
    N2 = data.draw(st.integers(1, 8))
    T2 = data.draw(st.integers(1, 8))
    M = low_rank(g, N1 + N2, T1 + T2, r)
    _, fit, res = fit_of(M, N1, T1, r)
    assert np.linalg.norm(fit.M_hat_d - M[N1:, T1:]) <= 1e-10 * max(1.0, np.linalg.norm(M))
    assert np.all(variance_grid(fit, res) >= 0)
    s = np.linalg.svd(fit.M_hat_d, compute_uv=False)
    assert np.sum(s > 1e-8 * max(s[0], 1e-300)) <= r

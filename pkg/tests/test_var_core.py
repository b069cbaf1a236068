import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from svarbands.errors import ConfigError, DegenerateCovarianceError, SingularDesignError, StabilityError
from svarbands.var_core import (
    TimeSeriesData,
    VarDGP,
    VarSpec,
    bic_table,
    companion_matrix,
    estimate_ols,
    simulate_var,
    spectral_radius,
    structural_irf,
    vma_coefficients,
)

from conftest import DESIGN1_SIGMA_TR, DESIGN2_A1, DESIGN2_SIGMA_TR


def random_stable_dgp(rng, n, p, scale=0.9):
    coefs = rng.standard_normal((p, n, n))
    if p:
        while spectral_radius(coefs) >= scale:
            coefs *= 0.9
    M = rng.standard_normal((n, n))
    return VarDGP(coefs, M @ M.T + 0.5 * np.eye(n))


class TestEstimateOls:
    def test_noiseless_var1_recovers_coefficients(self):
        A = np.array([[0.5, 0.1, 0.0], [-0.2, 0.3, 0.2], [0.1, 0.0, 0.6]])
        y = np.empty((30, 3))
        y[0] = [1.0, -2.0, 0.5]
        for t in range(1, 30):
            y[t] = A @ y[t - 1]
        est = estimate_ols(TimeSeriesData(y), VarSpec(p=1, deterministics="none"), allow_degenerate=True)
        assert np.max(np.abs(est.coefs[0] - A)) < 1e-8
        assert np.max(np.abs(est.sigma_u)) < 1e-12

    def test_noiseless_data_raises_without_override(self):
        A = np.array([[0.5, 0.2], [-0.1, 0.4]])
        y = np.empty((30, 2))
        y[0] = [1.0, 2.0]
        for t in range(1, 30):
            y[t] = A @ y[t - 1]
        with pytest.raises(DegenerateCovarianceError):
            estimate_ols(y, VarSpec(p=1, deterministics="none"))

    def test_constant_series_is_degenerate(self):
        with pytest.raises(DegenerateCovarianceError):
            estimate_ols(np.full((20, 1), 3.0), VarSpec(p=0, deterministics="intercept"))

    def test_rank_deficient_regressors(self):
        x = np.random.default_rng(0).standard_normal(40)
        y = np.column_stack([x, 2.0 * x])
        with pytest.raises(SingularDesignError):
            estimate_ols(y, VarSpec(p=1, deterministics="intercept"))

    def test_design2_long_sample(self):
        dgp = VarDGP(np.array([DESIGN2_A1]), DESIGN2_SIGMA_TR @ DESIGN2_SIGMA_TR.T)
        data = simulate_var(dgp, 50_000, np.random.default_rng(3))
        est = estimate_ols(data, VarSpec(p=1))
        assert np.max(np.abs(est.coefs[0] - DESIGN2_A1)) < 0.02

    def test_divisor_and_cholesky(self, rng):
        dgp = random_stable_dgp(rng, 3, 2)
        data = simulate_var(dgp, 200, rng)
        est = estimate_ols(data, VarSpec(p=2, deterministics="intercept+trend"))
        resid = est.residuals
        assert_allclose(est.sigma_u, resid.T @ resid / (200 - 2 - 2), rtol=1e-12)
        assert np.all(np.diag(est.sigma_tr) > 0)
        assert np.allclose(np.triu(est.sigma_tr, 1), 0)
        rel = np.linalg.norm(est.sigma_tr @ est.sigma_tr.T - est.sigma_u) / np.linalg.norm(est.sigma_u)
        assert rel < 1e-10

    def test_ols_matches_lstsq(self, rng):
        dgp = random_stable_dgp(rng, 2, 2)
        y = simulate_var(dgp, 120, rng).values
        est = estimate_ols(y, VarSpec(p=2))
        X = np.column_stack([np.ones(118), y[1:-1], y[:-2]])
        B = np.linalg.lstsq(X, y[2:], rcond=None)[0]
        assert_allclose(est.intercept, B[0], atol=1e-10)
        assert_allclose(est.coefs[0], B[1:3].T, atol=1e-10)
        assert_allclose(est.coefs[1], B[3:5].T, atol=1e-10)

    def test_spec_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            estimate_ols(np.random.default_rng(0).standard_normal((50, 2)), VarSpec(p=1, n=3))


class TestVma:
    def test_identity_at_zero(self, rng):
        dgp = random_stable_dgp(rng, 3, 2)
        assert_allclose(vma_coefficients(dgp, 0)[0], np.eye(3))

    def test_scalar_power(self):
        dgp = VarDGP(np.array([[[0.5]]]), np.array([[1.0]]))
        assert vma_coefficients(dgp, 3)[3][0, 0] == pytest.approx(0.125)

    def test_design2_square(self):
        dgp = VarDGP(np.array([DESIGN2_A1]), np.eye(2))
        comp = np.linalg.matrix_power(companion_matrix(dgp.coefs), 2)
        assert_allclose(vma_coefficients(dgp, 2)[2], comp[:2, :2], atol=1e-14)

    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
    def test_companion_power_oracle(self, seed, n, p):
        rng = np.random.default_rng(seed)
        coefs = rng.standard_normal((p, n, n)) * 0.4
        C = vma_coefficients(VarDGP(coefs, np.eye(n)), 10).matrices
        comp = companion_matrix(coefs)
        P = np.eye(n * p)
        for h in range(11):
            assert np.max(np.abs(C[h] - P[:n, :n])) < 1e-10 * max(1.0, np.abs(P).max())
            P = comp @ P


class TestStructuralIrf:
    def test_impact_first_basis(self, rng):
        dgp = random_stable_dgp(rng, 3, 1)
        irf = structural_irf(dgp, np.array([1.0, 0, 0]), 0)
        assert_allclose(irf[:, 0], dgp.sigma_tr[:, 0])

    def test_design1_impact(self):
        dgp = VarDGP(np.zeros((0, 2, 2)), DESIGN1_SIGMA_TR @ DESIGN1_SIGMA_TR.T)
        assert_allclose(structural_irf(dgp, np.array([1.0, 0.0]), 0)[:, 0], [0.597, -0.205], atol=1e-12)

    def test_non_unit_q(self, rng):
        with pytest.raises(ConfigError):
            structural_irf(random_stable_dgp(rng, 2, 1), np.array([1.0, 1.0]), 2)

    @given(st.integers(0, 10_000))
    def test_matches_direct_recomputation(self, seed):
        rng = np.random.default_rng(seed)
        dgp = random_stable_dgp(rng, 3, 2)
        q = rng.standard_normal(3)
        q /= np.linalg.norm(q)
        irf = structural_irf(dgp, q, 6)
        # Independent recursion on the structural responses themselves.
        resp = [dgp.sigma_tr @ q]
        for h in range(1, 7):
            acc = np.zeros(3)
            for j in range(1, min(h, 2) + 1):
                acc += dgp.coefs[j - 1] @ resp[h - j]
            resp.append(acc)
        assert_allclose(irf, np.array(resp).T, atol=1e-12)

    @given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
    def test_linear_in_q(self, seed, a, b):
        rng = np.random.default_rng(seed)
        dgp = random_stable_dgp(rng, 3, 1)
        C = vma_coefficients(dgp, 4).matrices
        f = lambda v: (C @ (dgp.sigma_tr @ v)).T  # noqa: E731
        q1, q2 = rng.standard_normal(3), rng.standard_normal(3)
        assert_allclose(f(a * q1 + b * q2), a * f(q1) + b * f(q2), atol=1e-10)


class TestSimulate:
    def test_lln_covariance(self):
        dgp = VarDGP(np.zeros((1, 2, 2)), np.eye(2))
        y = simulate_var(dgp, 10_000, np.random.default_rng(1)).values
        assert np.max(np.abs(np.cov(y.T) - np.eye(2))) < 0.05

    def test_deterministic(self, rng):
        dgp = random_stable_dgp(rng, 2, 2)
        a = simulate_var(dgp, 50, np.random.default_rng(9)).values
        b = simulate_var(dgp, 50, np.random.default_rng(9)).values
        assert np.array_equal(a, b)

    def test_explosive_rejected(self):
        dgp = VarDGP(np.array([[[1.01]]]), np.array([[1.0]]))
        with pytest.raises(StabilityError):
            simulate_var(dgp, 10, np.random.default_rng(0))
        y = simulate_var(dgp, 10, np.random.default_rng(0), allow_explosive=True)
        assert y.T == 10

    def test_design4_eigenvalues(self):
        A = np.array([[0.450, 0.014], [0.060, 0.953]])
        ev = np.sort(np.abs(np.linalg.eigvals(companion_matrix(A[None]))))
        assert ev[1] == pytest.approx(0.955, abs=1e-3)
        # The trace pins the smaller eigenvalue at 0.448 (not 0.498).
        assert ev[0] == pytest.approx(np.trace(A) - ev[1], abs=1e-12)
        assert ev[0] == pytest.approx(0.448, abs=1e-3)

    def test_intercept_mean(self):
        dgp = VarDGP(np.array([[[0.5]]]), np.array([[1.0]]), intercept=np.array([1.0]))
        y = simulate_var(dgp, 20_000, np.random.default_rng(2)).values
        assert y.mean() == pytest.approx(2.0, abs=0.05)


class TestData:
    def test_non_finite_rejected(self):
        with pytest.raises(ConfigError):
            TimeSeriesData(np.array([[1.0, np.nan]]))

    def test_bic_prefers_true_order(self):
        dgp = VarDGP(np.array([DESIGN2_A1]), DESIGN2_SIGMA_TR @ DESIGN2_SIGMA_TR.T)
        data = simulate_var(dgp, 2000, np.random.default_rng(4))
        tab = bic_table(data, 4)
        assert min(tab, key=lambda r: r["bic"])["p"] == 1

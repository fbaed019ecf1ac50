import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfcons_gp.gp import (TargetShift, empirical_alpha, fit_gp, gp_discrepancies_train,
                            gp_discrepancies_train_direct, gp_mean_test, posterior_cov_test_gp,
                            posterior_cov_train_shifted)

seeds = st.integers(0, 2**32 - 1)


def _kernel(r, n, rank=None):
    A = r.standard_normal((n, rank or n))
    return A @ A.T / (rank or n)


def test_gp_mean_small_example():
    K = np.array([[2.0, 1.0], [1.0, 2.0]])
    fit = fit_gp(K, [1.0, 0.0], 1.0)
    # (K + I)^{-1} g with K + I = [[3, 1], [1, 3]]
    assert np.allclose(fit.alpha_weights, [3 / 8, -1 / 8])
    assert np.allclose(gp_mean_test(fit, K), K @ [3 / 8, -1 / 8])


def test_fit_rejects_length_mismatch():
    with pytest.raises(ValueError):
        fit_gp(np.eye(3), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        gp_mean_test(fit_gp(np.eye(3), np.ones(3), 1.0), np.ones((2, 4)))


def test_empirical_alpha_cases():
    g = np.array([1.0, -2.0, 0.5])
    assert empirical_alpha(0.3 * g, g) == pytest.approx(0.7)
    assert empirical_alpha(g, g) == 0.0
    with pytest.raises(ValueError):
        empirical_alpha(g, np.zeros(3))


def test_test_shift_is_added(rng):
    K = _kernel(rng, 4)
    Ks = rng.standard_normal((4, 2))
    fit = fit_gp(K, rng.standard_normal(4), 0.5, TargetShift(np.zeros(4), np.array([1.0, 2.0])))
    assert np.allclose(gp_mean_test(fit, Ks) - Ks.T @ fit.alpha_weights, [1.0, 2.0])


@given(seed=seeds, s2=st.floats(0.01, 5.0))
def test_dual_identity(seed, s2):
    # (sigma2 I + K) w = g - dg, and sigma2 w = g - <f>
    r = np.random.default_rng(seed)
    n = 7
    K = _kernel(r, n)
    g, dg = r.standard_normal(n), 0.3 * r.standard_normal(n)
    fit = fit_gp(K, g, s2, TargetShift(dg))
    assert np.allclose((K + s2 * np.eye(n)) @ fit.alpha_weights, g - dg, rtol=1e-9, atol=1e-9)
    a, b = gp_discrepancies_train(fit), gp_discrepancies_train_direct(fit)
    assert np.allclose(a.values, b.values, rtol=1e-8, atol=1e-9)
    assert np.allclose(a.dual, fit.alpha_weights, rtol=1e-12)


@given(seed=seeds, s2=st.floats(0.01, 5.0))
def test_posterior_covariance_identities(seed, s2):
    r = np.random.default_rng(seed)
    n = 6
    K = _kernel(r, n, rank=4)
    Kt_inv = np.linalg.inv(K + s2 * np.eye(n))
    cov = posterior_cov_train_shifted(K, np.zeros((n, n)), s2)
    assert np.allclose(cov, s2 * np.eye(n) - s2**2 * Kt_inv, atol=1e-10)
    assert np.allclose(cov, K - K @ Kt_inv @ K, atol=1e-8 * (1 + np.abs(K).max()))
    fit = fit_gp(K, np.zeros(n), s2)
    assert np.allclose(posterior_cov_test_gp(fit, K, K), cov, atol=1e-8 * (1 + np.abs(K).max()))
    assert np.linalg.eigvalsh(cov)[0] >= -1e-9


@given(seed=seeds, a=st.floats(-3, 3))
def test_alpha_recovers_scaling(seed, a):
    g = np.random.default_rng(seed).standard_normal(5)
    assert empirical_alpha((1 - a) * g, g) == pytest.approx(a, abs=1e-10)


@given(seed=seeds)
def test_train_prediction_equals_target_minus_discrepancy(seed):
    r = np.random.default_rng(seed)
    K = _kernel(r, 5)
    g = r.standard_normal(5)
    fit = fit_gp(K, g, 0.7)
    assert np.allclose(gp_mean_test(fit, K), g - gp_discrepancies_train(fit).values, atol=1e-9)

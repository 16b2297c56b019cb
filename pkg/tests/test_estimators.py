import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mrpccd.errors import ConfigError, DataError, SolverError
from mrpccd.estimators import EwmaCovariance, ewma_update, fit_var1, nearest_psd_gap


def _absorb(seq, lam):
    state = EwmaCovariance.fresh(len(seq[0]), lam)
    for s in seq:
        state = ewma_update(state, s)
    return state


def test_constant_stream_has_zero_covariance():
    state = _absorb([np.array([1.0, 2.0, 3.0])] * 100, 0.9)
    assert np.all(state.sigma_tilde == 0.0)


def test_single_observation():
    state = _absorb([np.array([4.0, -1.0])], 0.9)
    assert np.all(state.sigma_tilde == 0.0)
    assert state.count == 1


def test_matches_unrolled_batch_formula():
    seq = [np.array([1.0, 2.0]), np.array([3.0, -1.0]), np.array([0.5, 0.25])]
    lam = 0.9
    # unrolled: mean_k = lam^(k-1) s_1 + sum_{i=2..k} lam^(k-i)(1-lam) s_i,
    # cov_n = sum_{k=2..n} lam^(n-k)(1-lam) d_k d_k' with d_k = s_k - mean_k
    n = len(seq)
    means = []
    for k in range(1, n + 1):
        m = lam ** (k - 1) * seq[0]
        for i in range(2, k + 1):
            m = m + lam ** (k - i) * (1 - lam) * seq[i - 1]
        means.append(m)
    cov = sum(lam ** (n - k) * (1 - lam) * np.outer(seq[k - 1] - means[k - 1], seq[k - 1] - means[k - 1])
              for k in range(2, n + 1))
    state = _absorb(seq, lam)
    np.testing.assert_allclose(state.mean, means[-1], rtol=0, atol=1e-12)
    np.testing.assert_allclose(state.sigma_tilde, cov, rtol=0, atol=1e-12)


def test_ewma_rejects_bad_input():
    state = EwmaCovariance.fresh(2, 0.9)
    with pytest.raises(DataError):
        ewma_update(state, np.array([1.0, np.inf]))
    with pytest.raises(DataError):
        ewma_update(state, np.ones(3))
    with pytest.raises(ConfigError):
        EwmaCovariance.fresh(2, 1.0)


def test_two_distinct_points_give_nonzero_covariance():
    state = _absorb([np.array([1.0, 1.0]), np.array([2.0, 0.0])], 0.5)
    assert np.any(state.sigma_tilde != 0)


@given(arrays(np.float64, (12, 3), elements=st.floats(-1e3, 1e3)), st.floats(0.01, 0.99))
def test_ewma_symmetric_psd_diagonal(seq, lam):
    state = _absorb(list(seq), lam)
    s = state.sigma_tilde
    assert np.max(np.abs(s - s.T)) <= 1e-12 * max(1.0, np.max(np.abs(s)))
    assert np.all(np.diag(s) >= 0)


def test_var1_noise_free_recovery(rng):
    a = np.array([[0.5, 0.2, 0.0], [-0.1, 0.7, 0.1], [0.0, 0.3, 0.4]])
    path = [rng.normal(size=3)]
    for _ in range(7):
        path.append(a @ path[-1])
    path = np.array(path)
    np.testing.assert_allclose(fit_var1(path, ridge=0.0, intercept=False).a_matrix, a, atol=1e-8)
    fit = fit_var1(path, ridge=0.0, intercept=True)
    np.testing.assert_allclose(fit.a_matrix, a, atol=1e-8)
    np.testing.assert_allclose(fit.intercept, 0.0, atol=1e-8)


def test_var1_white_noise_within_three_standard_errors():
    n, t = 3, 400
    inside = total = 0
    for seed in range(100):
        g = np.random.default_rng(seed)
        s = g.normal(size=(t, n))
        fit = fit_var1(s, ridge=0.0)
        x = s[:-1] - s[:-1].mean(axis=0)
        y = s[1:] - s[1:].mean(axis=0)
        resid = y - x @ fit.a_matrix.T
        sig2 = (resid ** 2).sum(axis=0) / (t - 1 - n - 1)
        xtx_inv = np.linalg.inv(x.T @ x)
        se = np.sqrt(np.outer(sig2, np.diag(xtx_inv)))
        inside += int(np.sum(np.abs(fit.a_matrix) < 3 * se))
        total += n * n
    # each entry lies inside 3 se with probability ~0.997
    assert inside / total >= 0.99


def test_var1_large_ridge_shrinks_to_zero(rng):
    s = np.cumsum(rng.normal(size=(50, 2)), axis=0)
    assert np.max(np.abs(fit_var1(s, ridge=1e12).a_matrix)) < 1e-6


def test_var1_joint_scaling(rng):
    s = np.cumsum(rng.normal(size=(80, 3)), axis=0)
    c = 7.5
    a1 = fit_var1(s, ridge=0.3).a_matrix
    a2 = fit_var1(c * s, ridge=0.3 * c * c).a_matrix
    np.testing.assert_allclose(a1, a2, rtol=1e-10, atol=1e-12)


def test_var1_singular_without_ridge(rng):
    x = rng.normal(size=(30, 1))
    with pytest.raises(SolverError):
        fit_var1(np.hstack([x, 2 * x]), ridge=0.0)


def test_psd_gap_examples():
    assert nearest_psd_gap(np.eye(3)) == 0.0
    assert nearest_psd_gap(np.diag([1.0, -2.0])) == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(ConfigError):
        nearest_psd_gap(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_psd_gap_against_lapack(rng):
    for _ in range(20):
        b = rng.normal(size=(5, 5))
        m = (b + b.T) / 2
        lo = sla.eigh(m, eigvals_only=True, driver="evd")[0]
        assert nearest_psd_gap(m) == pytest.approx(max(0.0, -lo), abs=1e-10)


@given(arrays(np.float64, (4, 4), elements=st.floats(-10, 10)))
def test_psd_gap_repairs(b):
    m = (b + b.T) / 2
    g = nearest_psd_gap(m)
    assert nearest_psd_gap(m + g * np.eye(4)) <= 1e-10 * max(1.0, np.abs(m).max())

import numpy as np
import pytest

from conftest import make_panel
from mrpccd.dlm import (
    DlmConfig, DlmState, GraphicalDlm, ParentGraph, assemble, dlm_step, propose_parents,
    review_parents,
)
from mrpccd.errors import DataError, SolverError
from mrpccd.market_data import N_FEATURES, feature_matrix, warmup


def _batch_nig(m0, c0, a0, b0, x, y):
    """Closed-form conjugate posterior of a static Bayesian regression."""
    c0_inv = np.linalg.inv(c0)
    prec = c0_inv + x.T @ x
    mn = np.linalg.solve(prec, c0_inv @ m0 + x.T @ y)
    an = a0 + 0.5 * len(y)
    bn = b0 + 0.5 * (y @ y + m0 @ c0_inv @ m0 - mn @ prec @ mn)
    return mn, np.linalg.inv(prec), an, bn


def test_static_discounts_match_batch_posterior(rng):
    p, n = 4, 500
    x = rng.normal(size=(n, p))
    theta = np.array([0.5, -1.0, 2.0, 0.1])
    y = x @ theta + rng.normal(0, 0.3, n)
    m0, c0 = np.zeros(p), 10.0 * np.eye(p)
    state = DlmState.prior(m0, c0, 2.0, 1.0, discount_state=1.0, discount_vol=1.0)
    for t in range(n):
        state, _ = dlm_step(state, x[t], y[t])
    mn, cn, an, bn = _batch_nig(m0, c0, 2.0, 1.0, x, y)
    np.testing.assert_allclose(state.theta_mean, mn, rtol=0, atol=1e-8)
    np.testing.assert_allclose(state.theta_cov_scalefree, cn, rtol=0, atol=1e-8)
    assert state.nig_shape == pytest.approx(an, abs=1e-8)
    assert state.nig_rate == pytest.approx(bn, abs=1e-8)


def test_noise_free_consistency(rng):
    theta = np.array([1.0, -0.5, 0.25])
    state = DlmState.prior(np.zeros(3), 100.0, 1.0, 1.0)
    for _ in range(300):
        f = rng.normal(size=3)
        state, fc = dlm_step(state, f, f @ theta)
    f = rng.normal(size=3)
    _, fc = dlm_step(state, f, f @ theta)
    np.testing.assert_allclose(state.theta_mean, theta, atol=1e-6)
    assert abs(fc.mean - f @ theta) < 1e-6


def test_first_forecast_is_prior_mean():
    m0 = np.array([0.3, 0.7])
    state = DlmState.prior(m0, 1e6, 1.0, 1.0)
    f = np.array([2.0, -1.0])
    _, fc = dlm_step(state, f, 5.0)
    assert fc.mean == f @ m0


def test_step_rejects_bad_input():
    state = DlmState.prior(np.zeros(2), 1.0)
    with pytest.raises(DataError):
        dlm_step(state, np.array([1.0, np.nan]), 1.0)
    with pytest.raises(DataError):
        dlm_step(state, np.ones(2), np.inf)
    with pytest.raises(DataError):
        dlm_step(state, np.ones(3), 1.0)


def test_propose_parents_rules():
    g = ParentGraph(4, 2)
    assert propose_parents(np.eye(4), 0, g, 3) == []
    corr = np.eye(4)
    corr[0, 2] = corr[2, 0] = 0.9
    assert propose_parents(corr, 0, g, 1) == [2]
    corr[0, 1] = corr[1, 0] = -0.5
    corr[0, 3] = corr[3, 0] = 0.5
    assert propose_parents(corr, 0, g, 3) == [2, 1, 3]  # tie |0.5| -> lower index
    g.sp[0] = [2]
    assert propose_parents(corr, 0, g, 3) == [1, 3]


def _state_with(coefs, sds, shape=1.0, rate=1.0):
    """State whose exogenous slots have the given means and posterior sds."""
    p = N_FEATURES + len(coefs)
    m = np.zeros(p)
    m[N_FEATURES:] = coefs
    c = np.eye(p)
    c[N_FEATURES:, N_FEATURES:] = np.diag(np.square(sds)) * shape / rate
    return DlmState(m, c, shape, rate)


def test_review_drops_zero_coefficient_candidate():
    g = ParentGraph(3, 2)
    g.probation[0] = {1: 0}
    out = review_parents(_state_with([0.0], [0.1]), g, 0, 1.0, now=10, probation_len=10)
    assert out.sp[0] == [] and out.probation[0] == {}


def test_review_admits_and_refreshes_gamma():
    g = ParentGraph(3, 2)
    g.probation[0] = {2: 0}
    out = review_parents(_state_with([0.8], [0.1]), g, 0, 1.0, now=10, probation_len=10)
    assert out.sp[0] == [2]
    assert out.gamma[0, 2] == 0.8
    assert out.snr[0, 2] == pytest.approx(8.0)


def test_review_keeps_parents_when_all_weak():
    g = ParentGraph(4, 2)
    g.sp[0] = [1]
    g.probation[0] = {2: 0, 3: 0}
    out = review_parents(_state_with([0.05, 0.01, 0.02], [1.0, 1.0, 1.0]), g, 0, 1.0, now=10, probation_len=10)
    assert out.sp[0] == [1]


def test_review_waits_for_probation():
    g = ParentGraph(3, 2)
    g.probation[0] = {1: 5}
    out = review_parents(_state_with([5.0], [0.1]), g, 0, 1.0, now=10, probation_len=10)
    assert out.probation[0] == {1: 5} and out.sp[0] == []


def test_review_evicts_weakest_when_full():
    g = ParentGraph(4, 2)
    g.sp[0] = [1, 2]
    g.probation[0] = {3: 0}
    # slots: 1 (snr 2), 2 (snr 5), candidate 3 (snr 9)
    out = review_parents(_state_with([0.2, 0.5, 0.9], [0.1, 0.1, 0.1]), g, 0, 1.0, now=10, probation_len=10)
    assert sorted(out.sp[0]) == [2, 3]
    assert out.gamma[0, 1] == 0.0


def test_assemble_identity():
    g = ParentGraph(3, 2)
    omega, sigma = assemble(g)
    np.testing.assert_array_equal(omega, np.eye(3))
    np.testing.assert_array_equal(sigma, np.eye(3))


def test_assemble_two_by_two():
    g = ParentGraph(2, 1)
    g.gamma[0, 1] = 0.5
    omega, _ = assemble(g)
    # (I - G)' (I - G) by hand: [[1, 0], [-0.5, 1]] @ [[1, -0.5], [0, 1]]
    np.testing.assert_allclose(omega, [[1.0, -0.5], [-0.5, 1.25]], atol=1e-15)


def test_assemble_inverse_pair(rng):
    n = 8
    g = ParentGraph(n, 3)
    for j in range(n):
        for k in rng.choice([i for i in range(n) if i != j], size=2, replace=False):
            g.gamma[j, k] = rng.uniform(-0.3, 0.3)
    g.lambda_diag = rng.uniform(0.5, 3.0, n)
    assert np.max(np.abs(np.linalg.eigvals(g.gamma))) < 1
    omega, sigma = assemble(g)
    np.testing.assert_allclose(omega @ sigma, np.eye(n), atol=1e-8)
    assert np.linalg.eigvalsh(omega)[0] > 0


def test_assemble_singular():
    g = ParentGraph(2, 1)
    g.gamma[0, 1] = 1.0
    g.gamma[1, 0] = 1.0
    with pytest.raises(SolverError, match="spectral radius"):
        assemble(g)


def _run_graph(seed, n_steps=300, coupling=0.8):
    """Asset 1 follows 0.8 x asset 0's return plus noise; asset 2 is independent."""
    g = np.random.default_rng(seed)
    r0 = g.normal(0, 0.01, n_steps)
    r1 = coupling * r0 + g.normal(0, 0.004, n_steps)
    r2 = g.normal(0, 0.01, n_steps)
    close = 50 * np.exp(np.cumsum(np.column_stack([r0, r1, r2]), axis=0))
    panel = make_panel(close)
    feats = feature_matrix(panel)
    logp = panel.log_close()
    ret = np.vstack([np.zeros((1, 3)), np.diff(logp, axis=0)])
    model = GraphicalDlm(3, DlmConfig(max_parents=1, n_candidates=2))
    for t in range(warmup() + 1, n_steps):
        model.update(t, feats[t - 1], logp[t], ret[t])
    return model


def test_true_parent_retained():
    hits = sum(0 in _run_graph(seed).graph.sp[1] for seed in range(50))
    assert hits >= 48  # 95% of 50 trials


def test_graph_invariants_during_run():
    model = _run_graph(3)
    g = model.refresh_graph()
    assert np.all(np.diag(g.gamma) == 0)
    for j in range(3):
        assert j not in g.sp[j]
        assert np.count_nonzero(g.gamma[j]) <= g.max_parents
        assert model.states[j].dim == N_FEATURES + len(g.slots(j))
    omega, sigma = assemble(g)
    assert np.linalg.eigvalsh(omega)[0] >= 0
    np.testing.assert_allclose(omega, omega.T, atol=1e-10)
    np.testing.assert_allclose(sigma, sigma.T, atol=1e-10)


def test_truncated_history_gives_same_states(rng):
    r0 = rng.normal(0, 0.01, 200)
    r1 = 0.8 * r0 + rng.normal(0, 0.004, 200)
    r2 = rng.normal(0, 0.01, 200)
    close = 50 * np.exp(np.cumsum(np.column_stack([r0, r1, r2]), axis=0))
    # stopping the full run at row 120 must match a run on the first 120 rows
    for a, b in zip(_replay(close, 120), _replay(close[:120], 120)):
        np.testing.assert_array_equal(a.theta_mean, b.theta_mean)
        np.testing.assert_array_equal(a.theta_cov_scalefree, b.theta_cov_scalefree)


def _replay(close, stop):
    panel = make_panel(close)
    feats = feature_matrix(panel)
    logp = panel.log_close()
    ret = np.vstack([np.zeros((1, close.shape[1])), np.diff(logp, axis=0)])
    model = GraphicalDlm(close.shape[1], DlmConfig(max_parents=1, n_candidates=2))
    for t in range(warmup() + 1, stop):
        model.update(t, feats[t - 1], logp[t], ret[t])
    return model.states


def test_predict_mean_identity_graph(rng):
    model = _run_graph(5, n_steps=80)
    feat = rng.normal(size=(3, N_FEATURES))
    mu = np.array([feat[j] @ model.states[j].theta_mean[:N_FEATURES] for j in range(3)])
    ig = np.eye(3) - model.graph.gamma
    np.testing.assert_allclose(ig @ model.predict_mean(feat), mu, atol=1e-12)

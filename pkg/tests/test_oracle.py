import numpy as np
import pytest
from hypothesis import given, strategies as st

from mrpccd.ccd import solve
from mrpccd.errors import ConfigError
from mrpccd.market_data import PricePanel
from mrpccd.mrp import MrpProblem
from mrpccd.oracle import (
    SyntheticSpec, brute_force_l1_min, cointegrating_basis, gap_audit, gen_synthetic, grid_l1_min,
    l1_sphere_minimum, optimality_gap, synthetic_log_prices,
)

M22 = np.array([[2.0, 1.0], [1.0, 2.0]])


def _random_l1_points(g, k, n):
    x = g.normal(size=(n, k)) * g.exponential(size=(n, k)) ** 3  # favour sparse points too
    return x / np.abs(x).sum(axis=1, keepdims=True)


def test_brute_force_two_by_two():
    x, val = brute_force_l1_min(M22)
    assert val == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(np.abs(x), [0.5, 0.5], atol=1e-12)
    assert x[0] * x[1] < 0


def test_brute_force_identity():
    x, val = brute_force_l1_min(np.eye(3))
    assert val == pytest.approx(1 / 3, abs=1e-12)
    np.testing.assert_allclose(np.abs(x), np.full(3, 1 / 3), atol=1e-12)


def test_brute_force_diagonal():
    x, val = brute_force_l1_min(np.diag([1.0, 4.0]))
    # the vertex (1, 0) gives 1 but (4/5, 1/5) gives 0.64 + 4 * 0.04 = 0.8
    assert val == pytest.approx(0.8, abs=1e-12)
    np.testing.assert_allclose(np.abs(x), [0.8, 0.2], atol=1e-12)


def test_brute_force_indefinite_uses_vertex():
    x, val = brute_force_l1_min(np.diag([-1.0, 4.0]))
    assert val == pytest.approx(-1.0)
    np.testing.assert_allclose(np.abs(x), [1.0, 0.0], atol=1e-12)


def test_brute_force_rejects_large_k():
    with pytest.raises(ConfigError):
        brute_force_l1_min(np.eye(7))


@pytest.mark.parametrize("k", [2, 3, 4, 5, 6])
def test_exact_minimum_beats_sampling_and_grid(rng, k):
    for _ in range(3):
        a = rng.normal(size=(k, k))
        m = 0.5 * (a + a.T)
        x, val = l1_sphere_minimum(m)
        assert np.abs(x).sum() == pytest.approx(1.0, abs=1e-12)
        assert x @ m @ x == pytest.approx(val, abs=1e-12)
        pts = _random_l1_points(rng, k, 20000)
        assert val <= np.einsum("ij,jk,ik->i", pts, m, pts).min() + 1e-12
        _, gval = grid_l1_min(m, resolution=0.1 if k > 4 else 0.05)
        assert val <= gval + 1e-12
        assert gval - val < 1e-3


@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
def test_grid_non_increasing_in_resolution(seed, k):
    g = np.random.default_rng(seed)
    a = g.normal(size=(k, k))
    m = 0.5 * (a + a.T)
    coarse = grid_l1_min(m, 0.25, polish=False)[1]
    fine = grid_l1_min(m, 0.125, polish=False)[1]
    finer = grid_l1_min(m, 0.0625, polish=False)[1]
    assert finer <= fine <= coarse


def test_gap_examples():
    assert optimality_gap(np.eye(3), np.full(3, 1 / 3)).gap == pytest.approx(0.0, abs=1e-12)
    res = solve(M22)
    rep = optimality_gap(MrpProblem.from_matrix(M22), res)
    assert rep.gap == pytest.approx(1 / 3, abs=1e-8)
    assert rep.ccd_objective == pytest.approx(2 / 3, abs=1e-10)
    assert rep.oracle_objective == pytest.approx(0.5, abs=1e-12)


def test_gap_audit_is_sound():
    gaps = gap_audit(n_instances=60, seed=11)
    assert list(gaps.columns) == ["instance", "k", "beta", "converged", "ccd_objective",
                                  "oracle_objective", "gap"]
    assert (gaps["gap"] >= -1e-9).all()
    assert gaps["k"].between(2, 6).all()


def test_gap_audit_rejects_large_k():
    with pytest.raises(ConfigError):
        gap_audit(n_instances=1, k_max=7)


def test_ou_without_noise_is_constant():
    panel = gen_synthetic(SyntheticSpec("ou", n=2, length=50, sigma=0.0, mu=np.log(20.0)))
    np.testing.assert_allclose(panel.close, 20.0, rtol=1e-14)


def test_var1_deterministic():
    a = np.array([[0.5, 0.1], [0.0, 0.8]])
    s1 = gen_synthetic(SyntheticSpec("var1", n=2, length=200, seed=9, a=a))
    s2 = gen_synthetic(SyntheticSpec("var1", n=2, length=200, seed=9, a=a))
    assert s1.equals(s2)
    s3 = gen_synthetic(SyntheticSpec("var1", n=2, length=200, seed=10, a=a))
    assert not s1.equals(s3)


def test_var1_without_noise_stays_at_level():
    a = np.array([[0.5, 0.1], [0.0, 0.8]])
    spec = SyntheticSpec("var1", n=2, length=300, seed=1, a=a, sigma=0.0)
    logp, _ = synthetic_log_prices(spec)
    np.testing.assert_allclose(logp, spec.level, atol=0)


def test_cointegrated_basket_variance_growth():
    spec = SyntheticSpec("cointegrated-basket", n=4, length=10_000, seed=5)
    logp, _ = synthetic_log_prices(spec)
    w = cointegrating_basis(spec.factor_loadings())[:, 0]
    b = spec.factor_loadings() / np.linalg.norm(spec.factor_loadings())

    def growth(v, h=100):
        p = logp @ v
        return np.var(p[h:] - p[:-h]) / np.var(np.diff(p)) / h

    assert np.allclose(spec.factor_loadings() @ cointegrating_basis(spec.factor_loadings()), 0.0, atol=1e-12)
    # stationary combination: h-step increment variance saturates
    assert growth(w) < 0.2
    # factor direction: h-step increment variance grows about linearly in h
    assert growth(b) > 0.5
    # bounded sample variance over both halves
    p = logp @ w
    assert np.var(p[5000:]) < 2 * np.var(p[:5000])


@pytest.mark.parametrize("kind", ["var1", "ou", "cointegrated-basket"])
@given(seed=st.integers(0, 2**32 - 1))
def test_generated_panels_valid(kind, seed):
    panel = gen_synthetic(SyntheticSpec(kind, n=3, length=60, seed=seed))
    assert isinstance(panel, PricePanel)
    assert np.all(panel.low <= np.minimum(panel.open, panel.close))
    assert np.all(panel.high >= np.maximum(panel.open, panel.close))
    assert np.all(panel.low > 0)


@pytest.mark.parametrize("kwargs", [
    {"kind": "ou", "rho": 1.5},
    {"kind": "var1", "n": 2, "a": np.eye(2)},
    {"kind": "var1", "n": 2, "a": np.eye(3) * 0.5},
    {"kind": "brownian"},
    {"kind": "ou", "sigma": -1.0},
    {"kind": "cointegrated-basket", "n": 3, "loadings": (1.0, 2.0)},
])
def test_invalid_specs(kwargs):
    with pytest.raises(ConfigError):
        SyntheticSpec(**kwargs)

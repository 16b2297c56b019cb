"""Per-asset dynamic linear models coupled through a sparse parent graph.

Each asset ``j`` has a Normal/Inverse-Gamma DLM for its log price

    y_j,t = e_j,t-1' phi_j + r_sp(j),t' gamma_j + v_j,t,    v ~ N(0, 1/lambda_j)

with identity evolution, state noise implied by a discount factor, and
volatility discounting of the Inverse-Gamma parameters.  The coefficients on
contemporaneous parent returns form the rows of ``Gamma``; together with the
precision means ``Lambda`` they define the sparse precision
``Omega = (I - Gamma)' Lambda (I - Gamma)``.

Monte-Carlo recoupling of the simultaneous system is not performed; the
graph is assembled from posterior means.
"""
from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, SolverError
from .estimators import EwmaCovariance, ewma_update
from .market_data import N_FEATURES, Horizons, _ew_weights

Forecast = namedtuple("Forecast", ["mean", "variance", "dof"])


@dataclass(frozen=True)
class DlmState:
    """NIG posterior ``theta | v ~ N(m, v C)``, ``v ~ IG(shape, rate)``."""

    theta_mean: np.ndarray
    theta_cov_scalefree: np.ndarray
    nig_shape: float
    nig_rate: float
    discount_state: float = 0.98
    discount_vol: float = 0.97

    def __post_init__(self):
        if not (self.nig_shape > 0 and self.nig_rate > 0):
            raise ConfigError("Inverse-Gamma parameters must be positive")
        for d in (self.discount_state, self.discount_vol):
            if not 0.0 < d <= 1.0:
                raise ConfigError("discount factors must lie in (0, 1]")

    @classmethod
    def prior(cls, mean, cov, shape=1.0, rate=1.0, discount_state=0.98, discount_vol=0.97):
        mean = np.asarray(mean, dtype=float).copy()
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(mean.size)
        return cls(mean, cov.copy(), float(shape), float(rate), discount_state, discount_vol)

    @property
    def dim(self):
        return self.theta_mean.size

    @property
    def precision_mean(self):
        """Posterior mean of the observation precision."""
        return self.nig_shape / self.nig_rate

    def coef_sd(self, i):
        return float(np.sqrt(self.theta_cov_scalefree[i, i] * self.nig_rate / self.nig_shape))

    def snr(self, i):
        sd = self.coef_sd(i)
        return abs(float(self.theta_mean[i])) / sd if sd > 0 else np.inf

    def realign(self, keep, n_new, prior_var):
        """Keep the listed components (marginalising the rest) and append
        ``n_new`` fresh ones with zero mean and scale-free variance ``prior_var``."""
        keep = np.asarray(keep, dtype=int)
        p = keep.size + n_new
        m = np.zeros(p)
        c = np.zeros((p, p))
        m[: keep.size] = self.theta_mean[keep]
        c[: keep.size, : keep.size] = self.theta_cov_scalefree[np.ix_(keep, keep)]
        c[keep.size:, keep.size:] = prior_var * np.eye(n_new)
        return replace(self, theta_mean=m, theta_cov_scalefree=c)


def dlm_step(state, f, y):
    """One evolve/forecast/update cycle.

    Returns the updated state and the prior one-step forecast (Student-t
    with ``2*shape`` degrees of freedom, squared scale ``variance``).
    """
    f = np.asarray(f, dtype=float)
    if f.shape != state.theta_mean.shape:
        raise DataError(f"regression vector has length {f.size}, state has {state.dim}")
    if not np.all(np.isfinite(f)):
        raise DataError("non-finite regression vector")
    if not np.isfinite(y):
        raise DataError("non-finite observation")
    a = state.discount_vol * state.nig_shape
    b = state.discount_vol * state.nig_rate
    r = state.theta_cov_scalefree / state.discount_state
    m = state.theta_mean
    rf = r @ f
    q = float(f @ rf) + 1.0
    mean = float(f @ m)
    fc = Forecast(mean, q * b / a, 2.0 * a)
    e = float(y) - mean
    gain = rf / q
    m_new = m + gain * e
    c_new = r - np.outer(gain, rf)
    c_new = 0.5 * (c_new + c_new.T)
    return replace(state, theta_mean=m_new, theta_cov_scalefree=c_new,
                   nig_shape=a + 0.5, nig_rate=b + 0.5 * e * e / q), fc


@dataclass
class ParentGraph:
    """Parent sets, candidate probation and the coefficient matrix ``Gamma``.

    ``sp[j]`` lists the admitted parents of ``j`` in admission order and
    ``probation[j]`` maps candidate -> time it entered the regression.  The
    exogenous part of asset ``j``'s state follows :meth:`slots`.
    """

    n: int
    max_parents: int
    sp: list = field(default_factory=list)
    probation: list = field(default_factory=list)
    gamma: np.ndarray = None
    lambda_diag: np.ndarray = None
    snr: np.ndarray = None

    def __post_init__(self):
        if self.max_parents < 0:
            raise ConfigError("max_parents must be nonnegative")
        if not self.sp:
            self.sp = [[] for _ in range(self.n)]
        if not self.probation:
            self.probation = [{} for _ in range(self.n)]
        if self.gamma is None:
            self.gamma = np.zeros((self.n, self.n))
        if self.lambda_diag is None:
            self.lambda_diag = np.ones(self.n)
        if self.snr is None:
            self.snr = np.zeros((self.n, self.n))

    def copy(self):
        return ParentGraph(self.n, self.max_parents, [list(s) for s in self.sp],
                           [dict(p) for p in self.probation], self.gamma.copy(),
                           self.lambda_diag.copy(), self.snr.copy())

    def slots(self, j):
        return list(self.sp[j]) + list(self.probation[j])

    def to_edge_frame(self, assets=None):
        rows = []
        for j in range(self.n):
            for k in self.sp[j]:
                rows.append((j, k, self.gamma[j, k], self.snr[j, k]))
        frame = pd.DataFrame(rows, columns=["child", "parent", "coefficient", "snr"])
        if assets is not None:
            frame["child"] = [assets[i] for i in frame["child"]]
            frame["parent"] = [assets[i] for i in frame["parent"]]
        return frame


def propose_parents(corr, j, current, n_candidates):
    """Assets most correlated (in absolute value) with ``j`` that are neither
    parents nor on probation.  Zero correlations are never proposed; ties go
    to the lower index."""
    corr = np.asarray(corr)
    taken = set(current.sp[j]) | set(current.probation[j]) | {j}
    pool = [k for k in range(corr.shape[0]) if k not in taken and abs(corr[j, k]) > 0]
    pool.sort(key=lambda k: (-abs(corr[j, k]), k))
    return pool[: max(int(n_candidates), 0)]


def review_parents(state, graph, j, snr_threshold, now=None, probation_len=0, n_endog=N_FEATURES):
    """Admit or drop the candidates of asset ``j`` whose probation has elapsed.

    A candidate is kept when ``|mean| / sd`` of its coefficient is at least
    ``snr_threshold``.  When the parent set is full it competes with the
    weakest incumbent (lowest SNR, lower index on ties) and the weaker of the
    two leaves.  Incumbents are never dropped for a low SNR alone.  Row ``j``
    of ``Gamma`` is then refreshed from the posterior means.

    ``state`` must be laid out as ``n_endog`` endogenous coefficients
    followed by ``graph.slots(j)``.
    """
    g = graph.copy()
    pos = {k: n_endog + i for i, k in enumerate(graph.slots(j))}
    snr = {k: state.snr(pos[k]) for k in pos}
    due = sorted((entry, k) for k, entry in graph.probation[j].items()
                 if now is None or now - entry >= probation_len)
    for _, cand in due:
        del g.probation[j][cand]
        if snr[cand] < snr_threshold:
            continue
        if len(g.sp[j]) < g.max_parents:
            g.sp[j].append(cand)
            continue
        if not g.sp[j]:
            continue
        weakest = min(g.sp[j], key=lambda k: (snr[k], k))
        if snr[cand] > snr[weakest]:
            g.sp[j].remove(weakest)
            g.sp[j].append(cand)
    g.gamma[j] = 0.0
    g.snr[j] = 0.0
    for k in g.sp[j]:
        g.gamma[j, k] = state.theta_mean[pos[k]]
        g.snr[j, k] = snr[k]
    g.lambda_diag[j] = state.precision_mean
    return g


def assemble(graph):
    """Precision ``(I-G)' L (I-G)`` and covariance ``H L^-1 H'`` with ``H = (I-G)^-1``."""
    lam = np.asarray(graph.lambda_diag, dtype=float)
    if not np.all(lam > 0):
        raise SolverError("all precisions must be positive")
    gamma = np.asarray(graph.gamma, dtype=float)
    n = gamma.shape[0]
    ig = np.eye(n) - gamma
    if np.linalg.cond(ig) > 1e12:
        rho = float(np.max(np.abs(np.linalg.eigvals(gamma)))) if n else 0.0
        raise SolverError(f"I - Gamma is singular (spectral radius of Gamma = {rho:.6g})")
    omega = ig.T @ (lam[:, None] * ig)
    h = np.linalg.solve(ig, np.eye(n))
    sigma = (h / lam) @ h.T
    return 0.5 * (omega + omega.T), 0.5 * (sigma + sigma.T)


@dataclass(frozen=True)
class DlmConfig:
    discount_state: float = 0.98
    discount_vol: float = 0.97
    max_parents: int = 10
    n_candidates: int = 3
    probation: int = 10
    review_every: int = 10
    snr_threshold: float = 1.0
    prior_obs_var: float = 1e-4
    prior_shape: float = 1.0
    prior_coef_sd: float = 1.0
    corr_decay: float = 0.97
    horizons: Horizons = Horizons()
    feature_decay: float = 0.98

    def __post_init__(self):
        if self.review_every < 1 or self.probation < 0:
            raise ConfigError("review_every must be positive and probation nonnegative")
        if self.snr_threshold <= 0:
            raise ConfigError("snr_threshold must be positive")


class GraphicalDlm:
    """Sequential driver: one DLM per asset plus parent proposal and review.

    Call :meth:`update` once per time step with the previous row's features
    and the current log prices.  Parent review happens every
    ``cfg.review_every`` updates; new candidates are proposed from an
    exponentially weighted correlation of log returns.
    """

    def __init__(self, n_assets, cfg=DlmConfig()):
        self.cfg = cfg
        self.n = n_assets
        self.graph = ParentGraph(n_assets, min(cfg.max_parents, max(n_assets - 1, 0)))
        a0 = cfg.prior_shape
        b0 = a0 * cfg.prior_obs_var
        self._prior_var = cfg.prior_coef_sd ** 2 / cfg.prior_obs_var
        m0 = np.zeros(N_FEATURES)
        m0[1] = 1.0  # random-walk prior on the latest averaged price
        self.states = [DlmState.prior(m0, self._prior_var, a0, b0, cfg.discount_state, cfg.discount_vol)
                       for _ in range(n_assets)]
        self.ret_cov = EwmaCovariance.fresh(n_assets, cfg.corr_decay)
        self.steps = 0
        self.last_features = None

    def update(self, t, feat_prev, logp, ret):
        """Absorb time ``t``: ``feat_prev`` is ``(N, 16)`` from row ``t-1``,
        ``logp`` and ``ret`` are the log prices and log returns at ``t``."""
        forecasts = []
        for j in range(self.n):
            f = np.concatenate([feat_prev[j], ret[self.graph.slots(j)]])
            self.states[j], fc = dlm_step(self.states[j], f, logp[j])
            forecasts.append(fc)
        self.ret_cov = ewma_update(self.ret_cov, ret)
        self.last_features = np.asarray(feat_prev)
        self.steps += 1
        if self.steps % self.cfg.review_every == 0:
            self._review(t)
        return forecasts

    def _review(self, t):
        corr = self.ret_cov.correlation()
        graph = self.graph
        for j in range(self.n):
            old = graph.slots(j)
            graph = review_parents(self.states[j], graph, j, self.cfg.snr_threshold,
                                   now=t, probation_len=self.cfg.probation)
            room = self.cfg.n_candidates - len(graph.probation[j])
            fresh = propose_parents(corr, j, graph, room)
            for k in fresh:
                # a candidate rejected just now may come straight back; it restarts from the prior
                graph.probation[j][k] = t
            new = graph.slots(j)
            retained = [k for k in new if k not in fresh]
            assert retained + list(fresh) == new
            keep = list(range(N_FEATURES)) + [N_FEATURES + old.index(k) for k in retained]
            self.states[j] = self.states[j].realign(keep, len(fresh), self._prior_var)
        self.graph = graph

    def refresh_graph(self):
        """Recompute Gamma rows and precisions from the current posteriors."""
        g = self.graph.copy()
        for j in range(self.n):
            pos = {k: N_FEATURES + i for i, k in enumerate(g.slots(j))}
            g.gamma[j] = 0.0
            for k in g.sp[j]:
                g.gamma[j, k] = self.states[j].theta_mean[pos[k]]
                g.snr[j, k] = self.states[j].snr(pos[k])
            g.lambda_diag[j] = self.states[j].precision_mean
        self.graph = g
        return g

    def covariance(self):
        """Model covariance ``Sigma`` from the current posterior means."""
        return assemble(self.refresh_graph())[1]

    def predict_mean(self, feat):
        """Joint one-step mean ``H mu`` from endogenous features of the last row."""
        mu = np.array([feat[j] @ self.states[j].theta_mean[:N_FEATURES] for j in range(self.n)])
        ig = np.eye(self.n) - self.graph.gamma
        return np.linalg.solve(ig, mu)

    def implied_ar_diagonal(self):
        """Derivative of each asset's endogenous mean with respect to its own
        latest log close; intraday regressors are ignored."""
        if self.last_features is None:
            raise SolverError("no observations absorbed yet")
        h = self.cfg.horizons
        decay = self.cfg.feature_decay
        out = np.zeros(self.n)
        for j in range(self.n):
            phi = self.states[j].theta_mean[:N_FEATURES]
            feat = self.last_features[j]
            val = 0.0
            for k, hh in enumerate(h.as_tuple()):
                val += _ew_weights(hh, decay)[0] * phi[1 + k] + phi[4 + k]
                val += phi[10 + 2 * k] if feat[4 + k] > 0 else phi[11 + 2 * k]
            out[j] = val
        return np.diag(out)

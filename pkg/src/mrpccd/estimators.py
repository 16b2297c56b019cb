"""Empirical covariance and baseline autoregressive estimators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, SolverError


@dataclass(frozen=True)
class EwmaCovariance:
    """Exponentially weighted mean and covariance of a vector stream.

    ``lam`` is the retention factor: the newest observation gets weight
    ``1 - lam``.  The first observation initialises the mean exactly and
    leaves the covariance at zero.
    """

    lam: float
    mean: np.ndarray
    sigma_tilde: np.ndarray
    count: int = 0

    @classmethod
    def fresh(cls, n, lam):
        if not 0.0 < lam < 1.0:
            raise ConfigError(f"EWMA decay must lie in (0, 1), got {lam}")
        return cls(float(lam), np.zeros(n), np.zeros((n, n)), 0)

    @property
    def dim(self):
        return self.mean.shape[0]

    def correlation(self):
        sd = np.sqrt(np.clip(np.diag(self.sigma_tilde), 0.0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = self.sigma_tilde / np.outer(sd, sd)
        corr[~np.isfinite(corr)] = 0.0
        np.fill_diagonal(corr, 1.0)
        return corr


def ewma_update(state, s):
    """Absorb one observation.

    ``mean <- lam*mean + (1-lam)*s`` and
    ``S <- lam*S + (1-lam)*(s-mean)(s-mean)'`` with the *updated* mean.
    """
    s = np.asarray(s, dtype=float)
    if s.shape != state.mean.shape:
        raise DataError(f"observation has shape {s.shape}, state expects {state.mean.shape}")
    if not np.all(np.isfinite(s)):
        raise DataError("non-finite observation passed to EWMA update")
    if state.count == 0:
        return EwmaCovariance(state.lam, s.copy(), np.zeros_like(state.sigma_tilde), 1)
    lam = state.lam
    mean = lam * state.mean + (1.0 - lam) * s
    dev = s - mean
    cov = lam * state.sigma_tilde + (1.0 - lam) * np.outer(dev, dev)
    cov = 0.5 * (cov + cov.T)
    return EwmaCovariance(lam, mean, cov, state.count + 1)


@dataclass(frozen=True)
class VarCoefficients:
    a_matrix: np.ndarray
    ridge: float
    window: int
    intercept: np.ndarray | None = None


def default_ridge(logp, scale=1e-6):
    """``scale * trace(X'X) / N`` on the centred lagged block."""
    x = np.asarray(logp, dtype=float)[:-1]
    x = x - x.mean(axis=0)
    return float(scale * np.sum(x * x) / x.shape[1])


def fit_var1(logp, ridge=0.0, intercept=True):
    """Ridge least squares for ``s_t = c + A s_{t-1} + e_t``.

    Parameters
    ----------
    logp : (T, N) array
        Rows are consecutive observations.
    ridge : float
        Frobenius penalty on ``A``.  Zero gives ordinary least squares and
        requires a nonsingular lagged Gram matrix.
    intercept : bool
        Fit a constant (equivalently, centre leads and lags separately).
        Prices are far from zero so the default keeps the mean out of ``A``.
    """
    logp = np.asarray(logp, dtype=float)
    if logp.ndim != 2 or logp.shape[0] < 2:
        raise DataError("need a (T, N) block with T >= 2")
    if ridge < 0:
        raise ConfigError("ridge must be nonnegative")
    x, y = logp[:-1], logp[1:]
    if intercept:
        xm, ym = x.mean(axis=0), y.mean(axis=0)
        x, y = x - xm, y - ym
    n = logp.shape[1]
    gram = x.T @ x + ridge * np.eye(n)
    if ridge == 0 and np.linalg.cond(gram) > 1e12:
        raise SolverError("singular normal equations; use ridge > 0 or a longer window")
    a = np.linalg.solve(gram, x.T @ y).T
    c = (ym - a @ xm) if intercept else None
    return VarCoefficients(a, float(ridge), logp.shape[0], c)


def nearest_psd_gap(m, atol=1e-10):
    """Smallest ``delta >= 0`` with ``m + delta*I`` positive semi-definite."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
    if not np.allclose(m, m.T, rtol=0.0, atol=atol * scale):
        raise ConfigError("matrix is not symmetric")
    lo = np.linalg.eigvalsh(0.5 * (m + m.T))[0]
    return float(max(0.0, -lo))

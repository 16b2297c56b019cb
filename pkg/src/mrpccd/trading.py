"""AR(1) fits of a portfolio value and the three mean-reversion sizing rules."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist

import numpy as np

from .errors import ConfigError

NO_FIT_RHO = 1.0 - 1e-6


@dataclass(frozen=True)
class OuParams:
    """Least-squares AR(1) fit ``P_t = c + rho P_{t-1} + sigma e_t``.

    ``fitted`` is False when the window is degenerate or not mean reverting
    (``|rho| >= 1 - 1e-6``); strategies then stay flat.
    """

    mu: float
    rho: float
    sigma: float
    stat_sd: float
    window: int
    fitted: bool = True

    @property
    def tradable(self):
        return self.fitted and self.sigma > 0 and self.stat_sd > 0

    @property
    def rho_continuous(self):
        return -math.log(self.rho) if 0 < self.rho < 1 else math.nan


def _no_fit(window):
    return OuParams(math.nan, math.nan, math.nan, math.nan, window, False)


def fit_ou(series, continuous=False):
    """Regress ``P_t`` on ``(1, P_{t-1})`` over the whole window.

    ``stat_sd`` is the stationary standard deviation of the fitted discrete
    AR(1), ``sigma / sqrt(1 - rho^2)``.  With ``continuous=True`` it is
    ``sqrt(sigma^2 / (2 kappa))`` with ``kappa = -ln(rho)`` instead.
    """
    p = np.asarray(series, dtype=float)
    n = p.size
    if n < 5:
        raise ConfigError("AR(1) fit needs at least 5 observations")
    if not np.all(np.isfinite(p)):
        return _no_fit(n)
    x, y = p[:-1], p[1:]
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-300 * max(1.0, float(x @ x)) or np.ptp(x) == 0:
        return _no_fit(n)
    rho = float(xc @ (y - y.mean())) / sxx
    c = float(y.mean() - rho * x.mean())
    if not abs(rho) < NO_FIT_RHO:
        return _no_fit(n)
    resid = y - c - rho * x
    sigma = float(np.sqrt(resid @ resid / max(n - 1 - 2, 1)))
    if sigma <= 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(y)))):
        sigma = 0.0  # exact recursion up to rounding
    mu = c / (1.0 - rho)
    if continuous:
        if not 0 < rho < 1:
            return _no_fit(n)
        stat_sd = math.sqrt(sigma ** 2 / (2.0 * -math.log(rho)))
    else:
        stat_sd = sigma / math.sqrt(1.0 - rho ** 2)
    return OuParams(mu, rho, sigma, stat_sd, n, True)


@dataclass(frozen=True)
class StrategySignal:
    weight: float
    regime: str | None = None
    alpha_band: float = math.nan


FLAT = StrategySignal(0.0, None)


def jy_weight(params, p):
    """Linear sizing ``(mu - p) rho / sigma^2``."""
    if not params.tradable:
        return FLAT
    return StrategySignal((params.mu - p) * params.rho / params.sigma ** 2)


@lru_cache(maxsize=64)
def _two_sided_quantile(epsilon):
    return NormalDist().inv_cdf(1.0 - epsilon / 2.0)


def band_width(params, epsilon):
    """``alpha = q(1 - epsilon/2) * stat_sd`` with ``q`` the standard normal quantile."""
    if not 0.0 < epsilon < 1.0:
        raise ConfigError("epsilon must lie in (0, 1)")
    return _two_sided_quantile(float(epsilon)) * params.stat_sd


def _regime(params, p, alpha):
    if p < params.mu - alpha:
        return "H1"
    if p > params.mu + alpha:
        return "H3"
    return "H2"


def ou_weight(params, p, epsilon=0.05, prior=None):
    """Threshold rule: +1 below ``mu - alpha``, -1 above ``mu + alpha``.

    An open position is held while the value stays on its side of the band
    and is flattened (never reversed) as soon as it leaves that side.
    """
    if not params.tradable:
        return FLAT
    alpha = band_width(params, epsilon)
    regime = _regime(params, p, alpha)
    held = 0.0 if prior is None else prior.weight
    if held > 0:
        w = 1.0 if regime == "H1" else 0.0
    elif held < 0:
        w = -1.0 if regime == "H3" else 0.0
    else:
        w = {"H1": 1.0, "H2": 0.0, "H3": -1.0}[regime]
    return StrategySignal(w, regime, alpha)


def mixed_weight(params, p, epsilon=0.05):
    """Zero inside the band; outside, linear sizing measured from the nearer edge."""
    if not params.tradable:
        return FLAT
    alpha = band_width(params, epsilon)
    regime = _regime(params, p, alpha)
    k = params.rho / params.sigma ** 2
    if regime == "H1":
        w = k * ((params.mu - alpha) - p)
    elif regime == "H3":
        w = k * ((params.mu + alpha) - p)
    else:
        w = 0.0
    return StrategySignal(w, regime, alpha)


STRATEGIES = ("jy", "ou", "mixed")


def signal(strategy, params, p, epsilon=0.05, prior=None):
    if strategy == "jy":
        return jy_weight(params, p)
    if strategy == "ou":
        return ou_weight(params, p, epsilon, prior)
    if strategy == "mixed":
        return mixed_weight(params, p, epsilon)
    raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")

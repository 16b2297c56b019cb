"""Cyclical coordinate descent for the L1-normalised mean-reversion objective.

Each sweep sets every coordinate to the zero of the partial gradient of
``x' M x`` with the multiplier of the normalisation fixed at zero, then the
vector is rescaled to unit L1 norm.  Iterating this converges to a fixed
*direction*; it is the literal scheme and is not certified to be the
constrained minimum (see :func:`mrpccd.oracle.optimality_gap`).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .errors import ConfigError, ConvergenceError, SolverError
from .mrp import MrpProblem

logger = logging.getLogger(__name__)


@dataclass
class WeightVector:
    weights: np.ndarray
    support: tuple

    @property
    def l1_norm(self):
        return float(np.abs(self.weights).sum())

    def dense(self, n):
        """Scatter onto a length-``n`` vector of the full universe."""
        out = np.zeros(n)
        out[list(self.support)] = self.weights
        return out


@dataclass(frozen=True)
class CcdConfig:
    tol: float = 1e-8
    max_sweeps: int = 10_000
    beta0: Optional[float] = None  # None: start from the problem's own beta
    beta_step_small: float = 1e-5
    beta_step_large: float = 1e-1
    beta_max_small_steps: int = 10
    beta_cap: float = 10.0
    lambda1: float = 0.0
    init: Optional[np.ndarray] = None  # None: equal weights

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.beta0 is not None and self.beta0 < 0:
            raise ConfigError("beta0 must be nonnegative")
        if self.lambda1 < 0:
            raise ConfigError("lambda1 must be nonnegative")
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be positive")


@njit(cache=True)
def _sweep_inplace(m, x, lambda1):
    k = x.shape[0]
    for i in range(k):
        s = 0.0
        for j in range(k):
            if j != i:
                s += m[i, j] * x[j]
        if lambda1 > 0.0:
            num = 2.0 * s
            shrunk = abs(num) - lambda1
            if shrunk > 0.0:
                x[i] = -math.copysign(shrunk, num) / (2.0 * m[i, i])
            else:
                x[i] = 0.0
        else:
            x[i] = -s / m[i, i]


_CONVERGED, _FALLBACK, _EXHAUSTED = 0, 1, 2
_TINY = np.finfo(float).tiny


@njit(cache=True)
def _iterate(m, x, lambda1, tol, max_sweeps):
    """Sweep and renormalise in place; returns ``(status, sweeps)``."""
    k = x.shape[0]
    prev = np.empty(k)
    for r in range(1, max_sweeps + 1):
        prev[:] = x
        _sweep_inplace(m, x, lambda1)
        norm = 0.0
        for i in range(k):
            norm += abs(x[i])
        if not (norm > _TINY and norm < np.inf):
            return _FALLBACK, r
        d_minus = 0.0
        d_plus = 0.0
        for i in range(k):
            x[i] /= norm
            d_minus = max(d_minus, abs(x[i] - prev[i]))
            d_plus = max(d_plus, abs(x[i] + prev[i]))
        if min(d_minus, d_plus) <= tol:
            return _CONVERGED, r
    return _EXHAUSTED, max_sweeps


def _check_diagonal(m):
    diag = np.diag(m)
    bad = np.flatnonzero(~(diag > 0))
    if bad.size:
        raise SolverError(f"nonpositive diagonal entry {diag[bad[0]]!r} at index {int(bad[0])}")


def coordinate_update(m, x, i, lambda1=0.0):
    """Value of coordinate ``i`` that zeroes the partial gradient given the rest."""
    s = float(m[i] @ x - m[i, i] * x[i])
    if lambda1 > 0:
        num = 2.0 * s
        num = math.copysign(max(abs(num) - lambda1, 0.0), num)
        return -num / (2.0 * m[i, i])
    return -s / m[i, i]


def sweep(x, m, lambda1=0.0):
    """One Gauss-Seidel pass over all coordinates; returns an unnormalised copy."""
    m = np.ascontiguousarray(m, dtype=float)
    _check_diagonal(m)
    out = np.array(getattr(x, "weights", x), dtype=float, copy=True)
    _sweep_inplace(m, out, float(lambda1))
    return out


def fix_sign(x):
    """Flip ``x`` so that its largest-magnitude entry (first on ties) is positive."""
    i = int(np.argmax(np.abs(x)))
    return -x if x[i] < 0 else x


@dataclass
class SolveResult:
    weights: WeightVector
    sweeps: int
    objective: float
    converged: bool = True
    fallback: bool = False
    iterate: Optional[np.ndarray] = None  # last iterate before sign fixing


def _as_problem(problem):
    if isinstance(problem, MrpProblem):
        return problem
    return MrpProblem.from_matrix(np.asarray(problem, dtype=float))


def solve(problem, cfg=CcdConfig(), raise_on_failure=True):
    """Sweep and renormalise until the direction stops moving.

    Convergence is tested modulo sign:
    ``min(|x_r - x_{r-1}|_inf, |x_r + x_{r-1}|_inf) <= tol``.
    If a sweep returns the zero vector (no off-diagonal coupling) the result
    falls back to equal weights with ``fallback=True``.
    """
    problem = _as_problem(problem)
    m = np.ascontiguousarray(problem.m_matrix)
    k = m.shape[0]
    _check_diagonal(m)
    if cfg.init is None:
        x = np.full(k, 1.0 / k)
    else:
        x = np.array(cfg.init, dtype=float, copy=True)
        if x.shape != (k,):
            raise ConfigError(f"warm start has shape {x.shape}, expected ({k},)")
        norm = np.abs(x).sum()
        if not norm > 0:
            raise ConfigError("warm start must be nonzero")
        x /= norm
    status, r = _iterate(m, x, float(cfg.lambda1), float(cfg.tol), int(cfg.max_sweeps))
    fallback = status == _FALLBACK
    converged = status != _EXHAUSTED
    if fallback:
        logger.debug("sweep collapsed to zero; falling back to equal weights")
        x = np.full(k, 1.0 / k)
    if not converged and raise_on_failure:
        raise ConvergenceError(f"no convergence after {cfg.max_sweeps} sweeps (k={k})")
    iterate = x.copy()
    x = fix_sign(x)
    return SolveResult(WeightVector(x, problem.support), r, float(x @ m @ x), converged, fallback, iterate)


@dataclass
class EscalationStep:
    beta: float
    objective: float
    sweeps: int
    converged: bool
    fallback: bool


@dataclass
class EscalationResult:
    weights: WeightVector
    beta: float
    result: SolveResult
    path: list = field(default_factory=list)

    @property
    def escalated(self):
        return len(self.path) > 1

    @property
    def converged(self):
        return self.result.converged


def beta_schedule(beta0, cfg=CcdConfig()):
    """Yield the trial values of beta: ``beta0``, then small steps, then large steps
    restarting from ``beta0``, stopping past ``cfg.beta_cap``."""
    yield beta0
    for i in range(1, cfg.beta_max_small_steps + 1):
        yield beta0 + i * cfg.beta_step_small
    j = 1
    while True:
        b = beta0 + j * cfg.beta_step_large
        if b > cfg.beta_cap:
            return
        yield b
        j += 1


def solve_with_escalation(problem, cfg=CcdConfig()):
    """Raise beta until the solution has a strictly positive objective.

    The objective at each trial is ``x'(D - S + beta I)x`` at the returned
    ``x``.  Only the sign of the objective decides acceptance: a trial that
    hits ``max_sweeps`` (the iteration matrix has a complex dominant pair, so
    the direction keeps rotating) is accepted when its objective is positive
    and reported with ``converged=False``.  Raises :class:`SolverError`
    carrying the full path once beta would exceed ``cfg.beta_cap``.
    """
    problem = _as_problem(problem)
    beta0 = problem.beta if cfg.beta0 is None else float(cfg.beta0)
    path = []
    for beta in beta_schedule(beta0, cfg):
        trial = problem.with_beta(beta)
        try:
            res = solve(trial, cfg, raise_on_failure=False)
        except SolverError:
            # nonpositive diagonal at this beta
            path.append(EscalationStep(beta, math.nan, 0, False, False))
            continue
        path.append(EscalationStep(beta, res.objective, res.sweeps, res.converged, res.fallback))
        if res.objective > 0:
            return EscalationResult(res.weights, beta, res, path)
    raise SolverError(f"beta escalation exceeded cap {cfg.beta_cap}", diagnostics=path)


def _soft_threshold(x, y):
    return np.sign(x) * np.maximum(np.abs(x) - y, 0.0)


def _budget_multiplier(z, denom, thr):
    """Solve ``sum_i ST(g - z_i, thr) / denom_i = 1`` for ``g``.

    The left side is continuous, nondecreasing and piecewise linear in ``g``.
    """
    knots = np.unique(np.concatenate([z - thr, z + thr]))

    def total(g):
        return float(np.sum(_soft_threshold(g - z, thr) / denom))

    vals = np.array([total(g) for g in knots])
    hi = int(np.searchsorted(vals, 1.0, side="left"))
    if hi == len(knots):
        # beyond the last knot every term is linear with slope 1/denom
        g0 = knots[-1]
        return g0 + (1.0 - vals[-1]) / np.sum(1.0 / denom)
    if hi == 0:  # pragma: no cover - vals[0] is 0 < 1
        return knots[0]
    g0, g1 = knots[hi - 1], knots[hi]
    v0, v1 = vals[hi - 1], vals[hi]
    return g0 + (1.0 - v0) * (g1 - g0) / (v1 - v0)


def ccd_min_variance(sigma, beta=0.0, alpha=0.0, tol=1e-12, max_sweeps=100_000):
    """Budget-constrained (``sum w = 1``) elastic-net minimum variance by CCD.

    Minimises ``w' S w + beta (alpha |w|_1 + (1 - alpha) |w|_2^2)``.  Each
    loop first re-solves the budget multiplier against the current cross
    terms, then updates every weight with the soft-thresholded KKT rule.
    """
    sigma = np.asarray(sigma, dtype=float)
    n = sigma.shape[0]
    if not np.allclose(sigma, sigma.T, atol=1e-12):
        raise SolverError("covariance must be symmetric")
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise SolverError("covariance must be positive definite") from exc
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1]")
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    diag = np.diag(sigma)
    denom = 2.0 * (diag + beta * (1.0 - alpha))
    thr = beta * alpha
    w = np.full(n, 1.0 / n)
    for r in range(1, max_sweeps + 1):
        prev = w.copy()
        z = 2.0 * (sigma @ w - diag * w)
        gamma = _budget_multiplier(z, denom, thr)
        for i in range(n):
            zi = 2.0 * (sigma[i] @ w - diag[i] * w[i])
            w[i] = _soft_threshold(gamma - zi, thr) / denom[i]
        # weights carry rounding noise of order eps * |gamma| / denom
        floor = 64 * np.finfo(float).eps * (abs(gamma) + thr) / denom.min()
        if np.max(np.abs(w - prev)) <= max(tol, floor):
            return WeightVector(w, tuple(range(n)))
    raise ConvergenceError(f"min-variance CCD did not converge in {max_sweeps} sweeps")

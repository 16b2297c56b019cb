"""Independent references and synthetic data for checking the solver and pipeline.

The L1-sphere minimum of ``x'Mx`` is found exactly by enumerating every
face of the cross-polytope: on the face with support ``S`` and signs ``s``
a stationary point satisfies ``M_SS x = mu s`` with ``s'x = 1``, so the
global minimum is the best feasible such point over all ``3^k - 1`` faces.
A literal grid search with local polish is kept alongside as a second,
cruder route.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from .ccd import CcdConfig, WeightVector, solve_with_escalation
from .errors import ConfigError
from .market_data import PricePanel
from .mrp import MrpProblem

MAX_ORACLE_K = 6


def _check_small(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError("expected a square matrix")
    if m.shape[0] > MAX_ORACLE_K:
        raise ConfigError(f"oracle supports k <= {MAX_ORACLE_K}, got k={m.shape[0]}")
    return 0.5 * (m + m.T)


def _face_candidates(msub, s, tol):
    """Feasible stationary points of ``x'Mx`` on the relative interior of one face."""
    vals, vecs = np.linalg.eigh(msub)
    scale = max(1.0, float(np.max(np.abs(vals))))
    nz = np.abs(vals) > 1e-12 * scale
    out = []
    # range part: x proportional to M^+ s
    y = vecs[:, nz] @ ((vecs[:, nz].T @ s) / vals[nz])
    sy = float(s @ y)
    if abs(sy) > 1e-14 and np.allclose(msub @ y, s, atol=1e-9 * scale):
        out.append(y / sy)
    # null directions give objective zero when they meet the face
    for v in vecs[:, ~nz].T:
        sv = float(s @ v)
        if abs(sv) > 1e-12:
            out.append(v / sv)
    return [x for x in out if np.all(s * x >= -tol)]


def l1_sphere_minimum(m, tol=1e-12):
    """Exact minimum of ``x'Mx`` subject to ``|x|_1 = 1`` by face enumeration."""
    m = _check_small(m)
    k = m.shape[0]
    best_val, best_x = math.inf, None
    for size in range(1, k + 1):
        for sub in itertools.combinations(range(k), size):
            idx = list(sub)
            msub = m[np.ix_(idx, idx)]
            # x and -x are equivalent: fix the first sign
            for tail in itertools.product((1.0, -1.0), repeat=size - 1):
                s = np.array((1.0,) + tail)
                for xs in _face_candidates(msub, s, tol):
                    val = float(xs @ msub @ xs)
                    if val < best_val - 1e-15:
                        x = np.zeros(k)
                        x[idx] = xs
                        best_val, best_x = val, x / np.abs(x).sum()
    return best_x, float(best_x @ m @ best_x)


def _compositions(n, k):
    """All nonnegative integer vectors of length ``k`` summing to ``n``."""
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        prev = -1
        parts = []
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(n + k - 1 - prev - 1)
        yield parts


def _polish(m, x, step, min_step):
    """Pairwise mass transfer on the L1 sphere with shrinking step."""
    k = x.size
    val = float(x @ m @ x)
    h = step
    while h >= min_step:
        improved = False
        for i in range(k):
            for j in range(k):
                if i == j or abs(x[i]) < h:
                    continue
                for sj in (1.0, -1.0):
                    if x[j] != 0 and np.sign(x[j]) != sj:
                        continue
                    y = x.copy()
                    y[i] -= math.copysign(h, x[i])
                    y[j] += sj * h
                    v = float(y @ m @ y)
                    if v < val - 1e-15:
                        x, val, improved = y, v, True
        if not improved:
            h /= 2.0
    return x, val


def grid_l1_min(m, resolution=0.05, polish=True, polish_step=1e-4):
    """Signed-simplex grid search at ``resolution`` followed by local polish."""
    m = _check_small(m)
    k = m.shape[0]
    n = int(round(1.0 / resolution))
    if n < 1:
        raise ConfigError("resolution must be at most 1")
    comps = np.array(list(_compositions(n, k)), dtype=float) / n
    best_val, best_x = math.inf, None
    for signs in itertools.product((1.0, -1.0), repeat=k - 1):
        pts = comps * np.array((1.0,) + signs)
        vals = np.einsum("ij,jk,ik->i", pts, m, pts)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best_x = float(vals[i]), pts[i].copy()
    if polish:
        best_x, best_val = _polish(m, best_x, resolution / 2.0, polish_step)
    return best_x, best_val


def brute_force_l1_min(m, resolution=None, polish_step=1e-4):
    """Reference minimiser of ``x'Mx`` over the L1 sphere for ``k <= 6``.

    The exact face enumeration always runs; when ``resolution`` is given the
    grid search is run as well and the better of the two is returned.
    """
    x, val = l1_sphere_minimum(m)
    if resolution is not None:
        gx, gval = grid_l1_min(m, resolution, polish=True, polish_step=polish_step)
        if gval < val:
            x, val = gx, gval
    return x, val


@dataclass(frozen=True)
class GapReport:
    gap: float
    ccd_objective: float
    oracle_objective: float
    ccd_weights: np.ndarray
    oracle_weights: np.ndarray


def optimality_gap(problem, ccd_solution):
    """Relative excess of the CCD objective over the exact L1-sphere minimum.

    When the exact minimum is zero the absolute difference is reported.
    """
    m = problem.m_matrix if isinstance(problem, MrpProblem) else np.asarray(problem, dtype=float)
    x = ccd_solution
    while hasattr(x, "weights"):  # SolveResult -> WeightVector -> array
        x = x.weights
    x = np.asarray(x, dtype=float)
    ox, oval = brute_force_l1_min(m)
    cval = float(x @ m @ x)
    denom = abs(oval)
    gap = (cval - oval) / denom if denom > 0 else cval - oval
    return GapReport(gap, cval, oval, x, ox)


def random_problem(rng, k, kind="PC"):
    """A ``D - S`` pair from two independent Wishart-like draws."""
    a = rng.normal(size=(k, 2 * k))
    b = rng.normal(size=(k, 2 * k))
    d = a @ a.T / (2 * k)
    s = b @ b.T / (2 * k)
    return MrpProblem(kind, d, s, 0.0, tuple(range(k)))


def gap_audit(n_instances=500, k_min=2, k_max=6, seed=0, beta0=1e-5, cfg=CcdConfig()):
    """Escalated CCD against the exact oracle on random ``D - S`` problems.

    Returns one row per instance: size, final beta, convergence flag, both
    objectives and the relative gap.
    """
    if k_max > MAX_ORACLE_K:
        raise ConfigError(f"k_max must be <= {MAX_ORACLE_K}")
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_instances):
        k = int(rng.integers(k_min, k_max + 1))
        prob = random_problem(rng, k).with_beta(beta0)
        esc = solve_with_escalation(prob, cfg)
        final = prob.with_beta(esc.beta)
        rep = optimality_gap(final, esc.weights)
        rows.append({
            "instance": i, "k": k, "beta": esc.beta, "converged": esc.converged,
            "ccd_objective": rep.ccd_objective, "oracle_objective": rep.oracle_objective,
            "gap": rep.gap,
        })
    return pd.DataFrame(rows)


# --------------------------------------------------------------------------
# synthetic panels

SYNTH_KINDS = ("var1", "ou", "cointegrated-basket")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic log-price panel.

    ``level`` is the log-price around which every series is centred.  For
    ``var1`` the deviations follow ``A`` with i.i.d. ``N(0, sigma^2)``
    shocks; for ``ou`` each asset is an AR(1) around ``mu`` (defaults to
    ``level``); for ``cointegrated-basket`` log prices are
    ``level + loadings * f_t + u_t`` with a random-walk factor ``f`` of step
    ``trend_sigma`` and AR(1) idiosyncrasies ``u``.
    """

    kind: str
    n: int = 1
    length: int = 1000
    seed: int = 0
    a: Optional[np.ndarray] = None
    rho: float = 0.9
    mu: Optional[float] = None
    sigma: float = 0.01
    trend_sigma: float = 0.01
    loadings: Optional[tuple] = None
    level: float = math.log(100.0)
    intrabar: float = 0.002
    start: str = "2000-01-03"

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise ConfigError(f"unknown generator kind {self.kind!r}; expected one of {SYNTH_KINDS}")
        if self.n < 1 or self.length < 2:
            raise ConfigError("need n >= 1 assets and length >= 2")
        if self.sigma < 0 or self.trend_sigma < 0 or self.intrabar < 0:
            raise ConfigError("noise scales must be nonnegative")
        if self.kind in ("ou", "cointegrated-basket") and not abs(self.rho) < 1:
            raise ConfigError(f"|rho| must be < 1, got {self.rho}")
        if self.kind == "var1":
            a = self.transition()
            if a.shape != (self.n, self.n):
                raise ConfigError(f"A must be {self.n}x{self.n}")
            if np.max(np.abs(np.linalg.eigvals(a))) >= 1:
                raise ConfigError("spectral radius of A must be < 1")
        if self.loadings is not None and len(self.loadings) != self.n:
            raise ConfigError("need one loading per asset")

    def transition(self):
        if self.a is None:
            return self.rho * np.eye(self.n)
        return np.asarray(self.a, dtype=float)

    def factor_loadings(self):
        if self.loadings is not None:
            return np.asarray(self.loadings, dtype=float)
        return np.linspace(0.5, 1.5, self.n) if self.n > 1 else np.ones(1)


def cointegrating_basis(loadings):
    """Orthonormal basis (columns) of the combinations with no factor exposure."""
    b = np.asarray(loadings, dtype=float).reshape(1, -1)
    _, _, vt = np.linalg.svd(b)
    return vt[1:].T


def _fabricate_ohlc(logp, rng, intrabar):
    close = np.exp(logp)
    open_ = np.vstack([close[:1], close[:-1]])
    up = np.abs(rng.normal(0.0, intrabar, size=close.shape))
    dn = np.abs(rng.normal(0.0, intrabar, size=close.shape))
    high = np.maximum(open_, close) * np.exp(up)
    low = np.minimum(open_, close) * np.exp(-dn)
    volume = np.round(rng.lognormal(13.0, 0.5, size=close.shape))
    return open_, high, low, close, volume


def synthetic_log_prices(spec):
    """Log closes ``(length, n)`` and the generator used afterwards for OHLC noise."""
    rng = np.random.default_rng(spec.seed)
    t, n = spec.length, spec.n
    if spec.kind == "var1":
        a = spec.transition()
        eps = rng.normal(0.0, spec.sigma, size=(t, n))
        dev = np.zeros((t, n))
        for i in range(1, t):
            dev[i] = a @ dev[i - 1] + eps[i]
        logp = spec.level + dev
    elif spec.kind == "ou":
        mu = spec.level if spec.mu is None else spec.mu
        eps = rng.normal(0.0, spec.sigma, size=(t, n))
        dev = np.zeros((t, n))
        for i in range(1, t):
            dev[i] = spec.rho * dev[i - 1] + eps[i]
        logp = mu + dev
    else:
        b = spec.factor_loadings()
        steps = rng.normal(0.0, spec.trend_sigma, size=t)
        steps[0] = 0.0
        factor = np.cumsum(steps)
        eps = rng.normal(0.0, spec.sigma, size=(t, n))
        u = np.zeros((t, n))
        for i in range(1, t):
            u[i] = spec.rho * u[i - 1] + eps[i]
        logp = spec.level + factor[:, None] * b[None, :] + u
    return logp, rng


def gen_synthetic(spec):
    """Deterministic synthetic :class:`PricePanel` for ``spec``.

    Opens equal the previous close; highs and lows extend the open/close
    range by half-normal log amounts of scale ``intrabar``.
    """
    logp, rng = synthetic_log_prices(spec)
    o, h, l, c, v = _fabricate_ohlc(logp, rng, spec.intrabar)
    dates = np.busday_offset(np.datetime64(spec.start, "D"), np.arange(spec.length), roll="forward")
    width = max(3, len(str(spec.n - 1)))
    assets = tuple(f"A{i:0{width}d}" for i in range(spec.n))
    return PricePanel(assets, dates, o, h, l, c, v)

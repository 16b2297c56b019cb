"""Rolling end-to-end evaluation of mean-reverting portfolios.

At every time step the estimators and per-asset DLMs absorb the newest
row.  Every ``refresh_every`` steps the support is re-selected from the
parent graph and each (kind, beta) problem is re-solved, warm-started from
its previous weights.  Between refreshes the basket is frozen.  Each
strategy fits an AR(1) to the trailing ``t_tr`` values of the current
basket and trades it; the step PnL is ``w_t * x_t'(s_{t+1} - s_t)``, so a
basket change closes the old position at the old basket's price.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from .ccd import CcdConfig, solve_with_escalation
from .dlm import DlmConfig, GraphicalDlm, assemble
from .errors import ConfigError, SolverError
from .estimators import EwmaCovariance, default_ridge, ewma_update, fit_var1
from .market_data import feature_matrix, resample, warmup
from .mrp import build_problem, select_support
from .tables import write_frame
from .trading import STRATEGIES, fit_ou, signal

BACKTEST_KINDS = ("PA", "PC")
PRICE_MODES = ("log", "raw")
PC_COVARIANCE = ("log_return", "log_price")
A_SOURCES = ("ridge", "dlm")


@dataclass(frozen=True)
class BacktestConfig:
    """Everything the rolling run needs besides the panel.

    ``betas`` and ``lambdas`` map each problem kind to its beta grid and
    EWMA retention.  PA always uses the covariance of log prices; PC uses
    log returns unless ``pc_covariance="log_price"``.
    """

    kinds: tuple = BACKTEST_KINDS
    betas: dict = field(default_factory=lambda: {"PA": (1e-5,), "PC": (1e-5,)})
    lambdas: dict = field(default_factory=lambda: {"PA": 0.9, "PC": 0.9})
    k: int = 10
    t_tr: int = 50
    strategies: tuple = STRATEGIES
    epsilon: float = 0.05
    refresh_every: int = 10
    stride: int = 1
    price_mode: str = "log"
    pc_covariance: str = "log_return"
    a_source: str = "ridge"
    var_window: int = 100
    ridge_scale: float = 1e-6
    continuous_sd: bool = False
    burn_in: Optional[int] = None
    ccd: CcdConfig = CcdConfig()
    dlm: DlmConfig = DlmConfig()

    def __post_init__(self):
        kinds = tuple(self.kinds)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "strategies", tuple(self.strategies))
        if not kinds or any(k not in BACKTEST_KINDS for k in kinds):
            raise ConfigError(f"kinds must be a nonempty subset of {BACKTEST_KINDS}")
        betas = {}
        for kind in kinds:
            grid = tuple(float(b) for b in self.betas.get(kind, ()))
            if not grid:
                raise ConfigError(f"beta grid for {kind} is empty")
            if any(not b >= 0 for b in grid):
                raise ConfigError(f"beta values must be nonnegative: {grid}")
            betas[kind] = grid
            lam = self.lambdas.get(kind)
            if lam is None or not 0.0 < lam < 1.0:
                raise ConfigError(f"lambda for {kind} must lie in (0, 1), got {lam}")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "lambdas", {k: float(self.lambdas[k]) for k in kinds})
        if not self.strategies or any(s not in STRATEGIES for s in self.strategies):
            raise ConfigError(f"strategies must be a nonempty subset of {STRATEGIES}")
        checks = [
            (self.k >= 2, "k must be at least 2"),
            (self.t_tr >= 5, "t_tr must be at least 5"),
            (0.0 < self.epsilon < 1.0, "epsilon must lie in (0, 1)"),
            (self.refresh_every >= 1, "refresh_every must be positive"),
            (self.stride >= 1, "stride must be positive"),
            (self.price_mode in PRICE_MODES, f"price_mode must be one of {PRICE_MODES}"),
            (self.pc_covariance in PC_COVARIANCE, f"pc_covariance must be one of {PC_COVARIANCE}"),
            (self.a_source in A_SOURCES, f"a_source must be one of {A_SOURCES}"),
            (self.var_window >= 3, "var_window must be at least 3"),
            (self.ridge_scale > 0, "ridge_scale must be positive"),
            (self.burn_in is None or self.burn_in >= 0, "burn_in must be nonnegative"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def members(self):
        return [(kind, beta) for kind in self.kinds for beta in self.betas[kind]]

    def start_index(self):
        """First decision time: features defined, then ``max(probation, t_tr)`` more rows."""
        if self.burn_in is not None:
            return max(self.burn_in, self.t_tr - 1)
        return warmup(self.dlm.horizons) + 1 + max(self.dlm.probation, self.t_tr)

    def check_panel(self, length, n_assets):
        if self.k > n_assets:
            raise ConfigError(f"support size k={self.k} exceeds the {n_assets} assets in the panel")
        if self.start_index() + 1 >= length:
            raise ConfigError(
                f"panel has {length} rows after resampling; burn-in and t_tr={self.t_tr} "
                f"need more than {self.start_index() + 1}")

    def to_dict(self):
        out = asdict(self)
        out["kinds"] = list(self.kinds)
        out["strategies"] = list(self.strategies)
        out["betas"] = {k: list(v) for k, v in self.betas.items()}
        out["ccd"].pop("init", None)
        out["dlm"]["horizons"] = list(self.dlm.horizons.as_tuple())
        return out


def member_label(kind, beta, strategy=None):
    base = f"{kind}:{beta!r}"
    return base if strategy is None else f"{base}:{strategy}"


@dataclass
class _Member:
    kind: str
    beta: float
    support: tuple = ()
    x: Optional[np.ndarray] = None
    prior: dict = field(default_factory=dict)


@dataclass
class BacktestReport:
    """Outputs of :func:`run`.

    ``equity`` holds one column per (kind, beta, strategy) run, one per
    strategy averaged over (kind, beta), and ``average`` over all runs.
    ``signals`` has one row per decision with the portfolio value, the
    weight, the fitted AR(1) and the realised increment to the next row.
    """

    config: BacktestConfig
    assets: tuple
    equity: pd.DataFrame
    signals: pd.DataFrame
    weights: pd.DataFrame
    supports: pd.DataFrame
    diagnostics: pd.DataFrame

    def member_columns(self):
        return [c for c in self.equity.columns if c.count(":") == 2]

    def write(self, out_dir):
        """Write the report directory; identical reports give identical bytes."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_frame(self.equity, out / "equity.csv", index=True)
        write_frame(self.signals, out / "signals.csv")
        write_frame(self.weights, out / "weights.csv")
        write_frame(self.supports, out / "supports.csv")
        write_frame(self.diagnostics, out / "diagnostics.csv")
        aggregate = list(self.config.strategies) + ["average"]
        write_frame(self.equity[aggregate], out / "plot_data.csv", index=True)
        with open(out / "backtest_config.json", "w", newline="\n") as fh:
            json.dump(self.config.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return out


class IdentityCheck(NamedTuple):
    ok: bool
    index: Optional[int] = None
    curve: Optional[str] = None

    def __bool__(self):
        return self.ok


def pnl_identity_check(report, atol=1e-10):
    """Verify ``equity_t = sum_{u<t} w_u (P_{u+1} - P_u)`` for every run.

    Returns a truthy :class:`IdentityCheck`, or a falsy one naming the first
    violating row and curve.
    """
    sig = report.signals
    if sig.empty:
        return IdentityCheck(True)
    pnl = (sig["weight"] * sig["increment"]).fillna(0.0)
    labels = [member_label(k, b, s) for k, b, s in zip(sig["kind"], sig["beta"], sig["strategy"])]
    table = pd.DataFrame({"date": sig["date"], "label": labels, "pnl": pnl.to_numpy()})
    wide = table.pivot(index="date", columns="label", values="pnl")
    first = None
    for col in report.member_columns():
        expected = np.concatenate([[0.0], np.cumsum(wide[col].to_numpy())[:-1]])
        got = report.equity[col].to_numpy()
        bad = np.flatnonzero(~(np.abs(got - expected) <= atol))
        if bad.size and (first is None or bad[0] < first[0]):
            first = (int(bad[0]), col)
    return IdentityCheck(True) if first is None else IdentityCheck(False, *first)


def _sigma_key(cfg, kind):
    src = "ret" if kind == "PC" and cfg.pc_covariance == "log_return" else "lev"
    return (src, cfg.lambdas[kind])


@dataclass
class Snapshot:
    """Model matrices at one time, ready to build problems from."""

    t: int
    support: tuple
    graph: object
    sigma_model: Optional[np.ndarray]
    a: Optional[np.ndarray]
    sigma_prev: dict
    sigma: dict
    failures: list = field(default_factory=list)  # (event, kind, detail)


class RollingModels:
    """Sequential estimators and DLMs over a panel.

    :meth:`absorb` must be called for ``t = 0, 1, 2, ...`` in order; after
    absorbing ``t`` everything held depends on rows ``<= t`` only.
    """

    def __init__(self, panel, cfg):
        self.cfg = cfg
        self.panel = panel
        t_len, n = panel.shape
        self.logp = panel.log_close()
        self.ret = np.vstack([np.zeros((1, n)), np.diff(self.logp, axis=0)])
        self.feats = feature_matrix(panel, cfg.dlm.horizons, cfg.dlm.feature_decay)
        self.first_dlm = warmup(cfg.dlm.horizons) + 1
        self.model = GraphicalDlm(n, cfg.dlm)
        keys = sorted({_sigma_key(cfg, kind) for kind in cfg.kinds})
        self.ewmas = {key: EwmaCovariance.fresh(n, key[1]) for key in keys}
        self.prev_sigma = {}
        self.t = -1

    def absorb(self, t):
        if t != self.t + 1:
            raise ValueError(f"rows must be absorbed in order; expected {self.t + 1}, got {t}")
        for key, state in self.ewmas.items():
            self.prev_sigma[key] = state.sigma_tilde
            if key[0] == "lev":
                self.ewmas[key] = ewma_update(state, self.logp[t])
            elif t >= 1:  # the first row has no return
                self.ewmas[key] = ewma_update(state, self.ret[t])
        if t >= self.first_dlm:
            self.model.update(t, self.feats[t - 1], self.logp[t], self.ret[t])
        self.t = t

    def snapshot(self):
        cfg, t = self.cfg, self.t
        graph = self.model.refresh_graph()
        support = tuple(sorted(select_support(graph, cfg.k)))
        snap = Snapshot(t, support, graph, None, None, dict(self.prev_sigma),
                        {key: st.sigma_tilde for key, st in self.ewmas.items()})
        try:
            snap.sigma_model = assemble(graph)[1]
        except SolverError as exc:
            snap.failures.append(("assemble_failed", "", str(exc)))
        if "PA" in cfg.kinds:
            if cfg.a_source == "dlm":
                snap.a = self.model.implied_ar_diagonal()
            else:
                window = self.logp[max(0, t - cfg.var_window + 1): t + 1]
                try:
                    snap.a = fit_var1(window, ridge=default_ridge(window, cfg.ridge_scale)).a_matrix
                except (SolverError, np.linalg.LinAlgError) as exc:
                    snap.failures.append(("var_fit_failed", "PA", str(exc)))
        return snap

    def problem(self, snap, kind, beta):
        """The restricted problem, or None when its inputs are unavailable."""
        if snap.sigma_model is None or (kind == "PA" and snap.a is None):
            return None
        key = _sigma_key(self.cfg, kind)
        return build_problem(kind, a=snap.a, sigma_model=snap.sigma_model,
                             sigma_tilde_prev=snap.sigma_prev[key], sigma_tilde=snap.sigma[key],
                             beta=beta, support=snap.support)


class SeriesTrades(NamedTuple):
    weights: np.ndarray
    pnl: np.ndarray


def trade_series(values, strategy, t_tr=50, epsilon=0.05, continuous=False):
    """Run one strategy on a supplied portfolio value path, bypassing the solver.

    At each ``t >= t_tr - 1`` the AR(1) is fitted on ``values[t - t_tr + 1: t + 1]``
    and the weight is applied to ``values[t + 1] - values[t]``.  Returns the
    weights and per-step PnL for ``t = t_tr - 1 .. len(values) - 2``.
    """
    p = np.asarray(values, dtype=float)
    if p.ndim != 1 or p.size <= t_tr:
        raise ConfigError(f"need a 1-d path longer than t_tr={t_tr}")
    weights = np.empty(p.size - t_tr)
    prior = None
    for i, t in enumerate(range(t_tr - 1, p.size - 1)):
        params = fit_ou(p[t - t_tr + 1: t + 1], continuous=continuous)
        prior = signal(strategy, params, p[t], epsilon, prior)
        weights[i] = prior.weight
    return SeriesTrades(weights, weights * np.diff(p[t_tr - 1:]))


def solve_member(problem, ccd_cfg, init=None):
    """Escalated solve; returns ``(result or None, [(event, value, detail), ...])``."""
    events = []
    try:
        esc = solve_with_escalation(problem, replace(ccd_cfg, init=init, beta0=None))
    except SolverError as exc:
        return None, [("solver_error", math.nan, str(exc))]
    if esc.escalated:
        events.append(("beta_escalated", esc.beta, ""))
    if esc.result.fallback:
        events.append(("equal_weight_fallback", math.nan, ""))
    if not esc.converged:
        events.append(("not_converged", esc.beta, ""))
    return esc, events


def run(panel, cfg=BacktestConfig()):
    """Rolling backtest of every (kind, beta, strategy) combination in ``cfg``."""
    if cfg.stride > 1:
        panel = resample(panel, cfg.stride)
    t_len, n = panel.shape
    cfg.check_panel(t_len, n)
    assets = panel.assets
    dates = panel.timestamps.astype(str)
    models = RollingModels(panel, cfg)
    values = models.logp if cfg.price_mode == "log" else np.asarray(panel.close, dtype=float)
    t0 = cfg.start_index()
    members = [_Member(kind, beta) for kind, beta in cfg.members()]
    sig_rows, w_rows, sup_rows, diag_rows = [], [], [], []

    def note(t, kind, beta, event, value=math.nan, detail=""):
        diag_rows.append((dates[t], kind, beta, event, value, detail))

    def refresh(t):
        snap = models.snapshot()
        sup_rows.append((dates[t], ";".join(assets[i] for i in snap.support)))
        for event, kind, detail in snap.failures:
            note(t, kind, math.nan, event, detail=detail)
        for mem in members:
            prob = models.problem(snap, mem.kind, mem.beta)
            if prob is None:
                mem.x = None
                continue
            init = mem.x if (mem.x is not None and mem.support == snap.support) else None
            esc, events = solve_member(prob, cfg.ccd, init)
            for event, value, detail in events:
                note(t, mem.kind, mem.beta, event, value, detail)
            if esc is None:
                mem.x = None
                continue
            mem.support, mem.x = snap.support, esc.weights.weights.copy()
            for i, wi in zip(snap.support, mem.x):
                w_rows.append((dates[t], mem.kind, mem.beta, assets[i], wi))

    for t in range(t_len):
        models.absorb(t)
        if t < t0:
            continue
        if (t - t0) % cfg.refresh_every == 0:
            refresh(t)
        for mem in members:
            if mem.x is None:
                mem.prior = {}
                for strat in cfg.strategies:
                    sig_rows.append((dates[t], mem.kind, mem.beta, strat, math.nan, 0.0, "",
                                     math.nan, math.nan, math.nan, math.nan, 0.0))
                continue
            idx = list(mem.support)
            window = values[t - cfg.t_tr + 1: t + 1, idx] @ mem.x
            p = float(window[-1])
            incr = float(values[t + 1, idx] @ mem.x) - p if t + 1 < t_len else math.nan
            params = fit_ou(window, continuous=cfg.continuous_sd)
            if not params.tradable:
                note(t, mem.kind, mem.beta, "no_fit")
            for strat in cfg.strategies:
                s = signal(strat, params, p, cfg.epsilon, mem.prior.get(strat))
                mem.prior[strat] = s
                sig_rows.append((dates[t], mem.kind, mem.beta, strat, p, s.weight, s.regime or "",
                                 params.mu, params.rho, params.sigma, s.alpha_band, incr))

    signals = pd.DataFrame(sig_rows, columns=["date", "kind", "beta", "strategy", "value", "weight",
                                              "regime", "mu", "rho", "sigma", "alpha", "increment"])
    equity = _equity(signals, cfg, dates[t0:])
    return BacktestReport(
        cfg, assets, equity, signals,
        pd.DataFrame(w_rows, columns=["date", "kind", "beta", "asset", "weight"]),
        pd.DataFrame(sup_rows, columns=["date", "support"]),
        pd.DataFrame(diag_rows, columns=["date", "kind", "beta", "event", "value", "detail"]),
    )


def _equity(signals, cfg, eval_dates):
    cols = {}
    n = len(eval_dates)
    n_runs = len(cfg.members()) * len(cfg.strategies)
    # rows are appended time-major, then member, then strategy
    pnl = (signals["weight"] * signals["increment"]).fillna(0.0).to_numpy().reshape(n, n_runs)
    order = 0
    for kind, beta in cfg.members():
        for strat in cfg.strategies:
            step = pnl[:, order]
            cols[member_label(kind, beta, strat)] = np.concatenate([[0.0], np.cumsum(step)[:-1]])
            order += 1
    frame = pd.DataFrame(cols, index=pd.Index(eval_dates, name="date"))
    for strat in cfg.strategies:
        members = [member_label(k, b, strat) for k, b in cfg.members()]
        frame[strat] = frame[members].mean(axis=1)
    frame["average"] = frame[list(cfg.strategies)].mean(axis=1)
    return frame

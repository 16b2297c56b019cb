"""Sparse mean-reverting portfolios via cyclical coordinate descent."""
from .backtest import BacktestConfig, BacktestReport, pnl_identity_check, run, trade_series
from .ccd import CcdConfig, WeightVector, ccd_min_variance, solve, solve_with_escalation, sweep
from .dlm import DlmConfig, GraphicalDlm, ParentGraph, assemble
from .errors import ConfigError, ConvergenceError, DataError, MrpError, SolverError
from .estimators import EwmaCovariance, ewma_update, fit_var1, nearest_psd_gap
from .market_data import CsvLayout, PricePanel, feature_matrix, load_panel, resample, save_panel
from .mrp import MrpProblem, build_problem, generalized_eig_oracle, predictability, select_support
from .oracle import SyntheticSpec, brute_force_l1_min, gap_audit, gen_synthetic, optimality_gap
from .trading import OuParams, fit_ou, jy_weight, mixed_weight, ou_weight

__all__ = [
    "BacktestConfig", "BacktestReport", "CcdConfig", "ConfigError", "ConvergenceError", "CsvLayout",
    "DataError", "DlmConfig", "EwmaCovariance", "GraphicalDlm", "MrpError", "MrpProblem", "OuParams",
    "ParentGraph", "PricePanel", "SolverError", "SyntheticSpec", "WeightVector", "assemble",
    "brute_force_l1_min", "build_problem", "ccd_min_variance", "ewma_update", "feature_matrix",
    "fit_ou", "fit_var1", "gap_audit", "gen_synthetic", "generalized_eig_oracle", "jy_weight",
    "load_panel", "mixed_weight", "nearest_psd_gap", "optimality_gap", "ou_weight", "pnl_identity_check",
    "predictability", "resample", "run", "save_panel", "select_support", "solve", "solve_with_escalation",
    "sweep", "trade_series",
]

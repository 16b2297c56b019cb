"""Declarative run configuration with dataset profiles.

A run config is a nested mapping (YAML or JSON).  The chosen profile fills
in defaults; every key given explicitly overrides it.  Unknown keys are
rejected at every level so that typos fail loudly.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

from .backtest import BacktestConfig
from .ccd import CcdConfig
from .dlm import DlmConfig
from .errors import ConfigError
from .market_data import CsvLayout, Horizons
from .oracle import SyntheticSpec

PROFILES = {
    "equities": {
        "backtest": {"k": 50, "lambdas": {"PA": 0.98, "PC": 0.85}, "t_tr": 50, "stride": 5,
                     "betas": {"PA": [1e-3, 1e-4, 1e-5, 1e-6], "PC": [1e-3, 1e-4, 1e-5, 1e-6]}},
        "dlm": {"max_parents": 10},
    },
    "fx": {
        "backtest": {"k": 10, "lambdas": {"PA": 0.8, "PC": 0.8}, "t_tr": 10, "stride": 1,
                     "betas": {"PA": [1e-1, 1e-2, 1e-3], "PC": [1e-2, 1e-4, 1e-5]}},
        "dlm": {"max_parents": 5},
    },
    "etf": {
        "backtest": {"k": 20, "lambdas": {"PA": 0.85, "PC": 0.98}, "t_tr": 10, "stride": 1,
                     "betas": {"PA": [1e-5, 1e-6], "PC": [1e-3, 1e-4]}},
        "dlm": {"max_parents": 10},
    },
    "custom": {
        "backtest": {"k": 10, "lambdas": {"PA": 0.9, "PC": 0.9}, "t_tr": 50, "stride": 1,
                     "betas": {"PA": [1e-5], "PC": [1e-5]}},
        "dlm": {"max_parents": 5},
    },
}


def _names(cls, drop=()):
    return {f.name for f in fields(cls)} - set(drop)


SECTIONS = {
    "data": {"path", "layout"},
    "synth": _names(SyntheticSpec, drop=("seed",)),
    "backtest": _names(BacktestConfig, drop=("ccd", "dlm")),
    "solver": _names(CcdConfig, drop=("init",)),
    "dlm": _names(DlmConfig),
    "solve": {"as_of"},
    "oracle": {"n_instances", "k_min", "k_max", "beta0"},
}
TOP_LEVEL = {"profile", "seed", "out_dir"} | set(SECTIONS)
LAYOUT_KEYS = _names(CsvLayout)

DEFAULTS = {
    "profile": "custom",
    "seed": 0,
    "out_dir": "out",
    "data": {"path": None, "layout": {"kind": "long"}},
    "synth": {"kind": "cointegrated-basket", "n": 4, "length": 1000},
    "backtest": {},
    "solver": {},
    "dlm": {},
    "solve": {"as_of": None},
    "oracle": {"n_instances": 500, "k_min": 2, "k_max": 6, "beta0": 1e-5},
}


def _check_keys(mapping, allowed, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(mapping).__name__}")
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(map(str, unknown))}")


def _merge(dst, src):
    """Recursive dict update: nested mappings merge, everything else replaces."""
    for key, val in src.items():
        if isinstance(val, dict) and isinstance(dst.get(key), dict):
            _merge(dst[key], val)
        else:
            dst[key] = copy.deepcopy(val)
    return dst


def load_file(path):
    """Parse a YAML or JSON config file into a dict."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return data or {}


def resolve(raw=None, profile=None, seed=None, out_dir=None):
    """Validate ``raw`` and merge it over the profile and built-in defaults.

    The result is the fully explicit config; feeding it back in gives the
    same result.
    """
    raw = copy.deepcopy(raw or {})
    _check_keys(raw, TOP_LEVEL, "config")
    for name, allowed in SECTIONS.items():
        if name in raw:
            _check_keys(raw[name], allowed, name)
    if "layout" in raw.get("data", {}):
        _check_keys(raw["data"]["layout"], LAYOUT_KEYS, "data.layout")
    for key, val in (("profile", profile), ("seed", seed), ("out_dir", out_dir)):
        if val is not None:
            raw[key] = val
    name = raw.get("profile", DEFAULTS["profile"])
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
    out = _merge(copy.deepcopy(DEFAULTS), PROFILES[name])
    _merge(out, raw)
    out["profile"] = name
    if not isinstance(out["seed"], int) or isinstance(out["seed"], bool):
        raise ConfigError(f"seed must be an integer, got {out['seed']!r}")
    # round-trip through the typed objects: bad values fail now and every
    # default becomes explicit in the echoed config
    bt = backtest_config(out).to_dict()
    out["solver"] = bt.pop("ccd")
    out["dlm"] = bt.pop("dlm")
    out["backtest"] = bt
    spec = asdict(synthetic_spec(out))
    spec.pop("seed")
    if spec["a"] is not None:
        spec["a"] = np.asarray(spec["a"], dtype=float).tolist()
    if spec["loadings"] is not None:
        spec["loadings"] = [float(v) for v in spec["loadings"]]
    out["synth"] = spec
    layout = asdict(csv_layout(out))
    if layout["assets"] is not None:
        layout["assets"] = list(layout["assets"])
    out["data"]["layout"] = layout
    oracle_settings(out)
    return out


def dlm_config(cfg):
    d = dict(cfg["dlm"])
    if "horizons" in d:
        h = d["horizons"]
        d["horizons"] = Horizons(**h) if isinstance(h, dict) else Horizons(*h)
    try:
        return DlmConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"dlm: {exc}") from exc


def ccd_config(cfg):
    try:
        return CcdConfig(**cfg["solver"])
    except TypeError as exc:
        raise ConfigError(f"solver: {exc}") from exc


def backtest_config(cfg):
    b = dict(cfg["backtest"])
    for key in ("kinds", "strategies"):
        if key in b:
            b[key] = tuple(b[key])
    if "betas" in b:
        b["betas"] = {k: tuple(v) for k, v in b["betas"].items()}
    try:
        return BacktestConfig(**b, ccd=ccd_config(cfg), dlm=dlm_config(cfg))
    except TypeError as exc:
        raise ConfigError(f"backtest: {exc}") from exc


def csv_layout(cfg):
    layout = dict(cfg["data"].get("layout") or {})
    if "columns" in layout:
        layout["columns"] = {**CsvLayout().columns, **layout["columns"]}
    if "assets" in layout and layout["assets"] is not None:
        layout["assets"] = tuple(layout["assets"])
    return CsvLayout(**layout)


def synthetic_spec(cfg):
    s = dict(cfg["synth"])
    if s.get("loadings") is not None:
        s["loadings"] = tuple(s["loadings"])
    try:
        return SyntheticSpec(seed=cfg["seed"], **s)
    except TypeError as exc:
        raise ConfigError(f"synth: {exc}") from exc


def oracle_settings(cfg):
    o = cfg["oracle"]
    if not 1 <= o["k_min"] <= o["k_max"] <= 6:
        raise ConfigError("oracle needs 1 <= k_min <= k_max <= 6")
    if o["n_instances"] < 1:
        raise ConfigError("oracle.n_instances must be positive")
    return o


def dump(cfg, path):
    """Write the resolved config as YAML; it can be passed back via ``--config``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True, default_flow_style=False)
    return path

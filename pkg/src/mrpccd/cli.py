"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver error.
Every command writes the fully resolved config to ``<out-dir>/config.yaml``;
passing that file back through ``--config`` reproduces the run.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import config as C
from .backtest import RollingModels, member_label, pnl_identity_check, run, solve_member
from .errors import ConfigError, DataError, SolverError
from .market_data import load_panel, resample, save_panel
from .oracle import gap_audit, gen_synthetic
from .tables import write_frame, write_matrix, write_problem

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4

logger = logging.getLogger("mrpccd")


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="YAML or JSON run config")
    parser.add_argument("--seed", type=int, default=default, help="random seed")
    parser.add_argument("--out-dir", default=default, help="output directory")
    parser.add_argument("--profile", default=default, choices=sorted(C.PROFILES),
                        help="dataset profile supplying parameter defaults")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mrpccd", description="Sparse mean-reverting portfolios: synthetic data, solves and backtests.")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic panel")
    p.add_argument("--kind", choices=("var1", "ou", "cointegrated-basket"))
    p.add_argument("--n", type=int)
    p.add_argument("--len", dest="length", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--trend-sigma", type=float)

    p = sub.add_parser("ingest", parents=[common], help="validate, align and resample a CSV panel")
    p.add_argument("--data")
    p.add_argument("--stride", type=int)

    p = sub.add_parser("solve", parents=[common], help="solve every (kind, beta) problem at one date")
    p.add_argument("--data")
    p.add_argument("--as-of", help="ISO date; default is the last row")

    p = sub.add_parser("backtest", parents=[common], help="rolling backtest and report directory")
    p.add_argument("--data")

    p = sub.add_parser("oracle-gap", parents=[common], help="CCD against the exact small-k oracle")
    p.add_argument("--n-instances", type=int)
    p.add_argument("--k-max", type=int)
    return parser


def _overrides(args):
    """Command-line values as a partial config mapping."""
    raw = {}

    def put(section, key, val):
        if val is not None:
            raw.setdefault(section, {})[key] = val

    cmd = args.command
    if cmd == "synth":
        for key in ("kind", "n", "length", "rho", "sigma", "trend_sigma"):
            put("synth", key, getattr(args, key))
    if cmd in ("ingest", "solve", "backtest"):
        put("data", "path", args.data)
    if cmd == "ingest":
        put("backtest", "stride", args.stride)
    if cmd == "solve":
        put("solve", "as_of", args.as_of)
    if cmd == "oracle-gap":
        put("oracle", "n_instances", args.n_instances)
        put("oracle", "k_max", args.k_max)
    return raw


def _load_data(cfg):
    path = cfg["data"]["path"]
    if not path:
        raise ConfigError("no data file configured (use --data or data.path)")
    return load_panel(path, C.csv_layout(cfg))


def cmd_synth(cfg, out):
    panel = gen_synthetic(C.synthetic_spec(cfg))
    path = out / "synthetic.csv"
    save_panel(panel, path)
    print(f"wrote {path} ({len(panel)} rows x {panel.n_assets} assets)")
    return EXIT_OK


def cmd_ingest(cfg, out):
    panel = _load_data(cfg)
    stride = C.backtest_config(cfg).stride
    if stride > 1:
        panel = resample(panel, stride)
    save_panel(panel, out / "panel.csv")
    summary = {
        "assets": list(panel.assets), "rows": len(panel), "stride": stride,
        "first": str(panel.timestamps[0]), "last": str(panel.timestamps[-1]),
    }
    with open(out / "summary.json", "w", newline="\n") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"ingested {len(panel)} rows x {panel.n_assets} assets into {out / 'panel.csv'}")
    return EXIT_OK


def cmd_solve(cfg, out):
    bcfg = C.backtest_config(cfg)
    panel = _load_data(cfg)
    if bcfg.stride > 1:
        panel = resample(panel, bcfg.stride)
    n = panel.n_assets
    if bcfg.k > n:
        raise ConfigError(f"support size k={bcfg.k} exceeds the {n} assets in the panel")
    as_of = cfg["solve"]["as_of"]
    if as_of is None:
        t = len(panel) - 1
    else:
        try:
            stamp = np.datetime64(str(as_of), "D")
        except ValueError as exc:
            raise ConfigError(f"bad as-of date {as_of!r}") from exc
        t = int(np.searchsorted(panel.timestamps, stamp, side="right")) - 1
        if t < 0:
            raise DataError(f"as-of date {as_of} precedes the first row {panel.timestamps[0]}")
    models = RollingModels(panel, bcfg)
    for i in range(t + 1):
        models.absorb(i)
    snap = models.snapshot()
    for event, kind, detail in snap.failures:
        logger.warning("%s %s: %s", event, kind, detail)
    assets = panel.assets
    if snap.sigma_model is not None:
        write_matrix(snap.sigma_model, assets, out / "sigma_model.csv")
    for (src, lam), mat in sorted(snap.sigma.items()):
        write_matrix(mat, assets, out / f"sigma_tilde_{src}_{lam!r}.csv")
    write_frame(snap.graph.to_edge_frame(assets), out / "parents.csv")
    w_rows, d_rows = [], []
    failed = 0
    for kind, beta in bcfg.members():
        prob = models.problem(snap, kind, beta)
        if prob is None:
            failed += 1
            continue
        write_problem(prob, assets, out / "problems" / f"{member_label(kind, beta).replace(':', '_')}.csv")
        esc, events = solve_member(prob, bcfg.ccd)
        for event, value, detail in events:
            logger.info("%s beta=%r: %s %s", kind, beta, event, detail)
        if esc is None:
            failed += 1
            d_rows.append((kind, beta, 0, math.nan, math.nan, 0, False, False))
            continue
        for step, rec in enumerate(esc.path):
            d_rows.append((kind, beta, step, rec.beta, rec.objective, rec.sweeps, rec.converged, rec.fallback))
        for i, wi in zip(prob.support, esc.weights.weights):
            w_rows.append((kind, beta, esc.beta, assets[i], wi))
    write_frame(pd.DataFrame(w_rows, columns=["kind", "beta", "final_beta", "asset", "weight"]),
                out / "weights.csv")
    write_frame(pd.DataFrame(d_rows, columns=["kind", "beta", "step", "trial_beta", "objective",
                                              "sweeps", "converged", "fallback"]),
                out / "diagnostics.csv")
    print(f"solved {len(bcfg.members()) - failed}/{len(bcfg.members())} problems "
          f"as of {panel.timestamps[t]}; outputs in {out}")
    if failed:
        raise SolverError(f"{failed} problem(s) could not be solved; see {out / 'diagnostics.csv'}")
    return EXIT_OK


def cmd_backtest(cfg, out):
    bcfg = C.backtest_config(cfg)
    panel = _load_data(cfg)
    report = run(panel, bcfg)
    report.write(out)
    check = pnl_identity_check(report)
    last = report.equity.iloc[-1]
    for name in list(bcfg.strategies) + ["average"]:
        print(f"{name:8s} final equity {last[name]: .6g}")
    if not check:
        raise SolverError(f"PnL identity violated at row {check.index} of {check.curve}")
    return EXIT_OK


def cmd_oracle_gap(cfg, out):
    o = C.oracle_settings(cfg)
    gaps = gap_audit(o["n_instances"], o["k_min"], o["k_max"], seed=cfg["seed"],
                     beta0=o["beta0"], cfg=C.ccd_config(cfg))
    write_frame(gaps, out / "gaps.csv")
    q = gaps["gap"].quantile([0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0])
    summary = pd.DataFrame({"quantile": q.index, "gap": q.to_numpy()})
    write_frame(summary, out / "gap_summary.csv")
    worst = float(gaps["gap"].min())
    print(f"{len(gaps)} instances; median gap {float(q.loc[0.5]):.4g}, min gap {worst:.3g}")
    if worst < -1e-9:
        raise SolverError(f"CCD beat the exact oracle by {-worst:.3g}; oracle unsound")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "solve": cmd_solve,
    "backtest": cmd_backtest,
    "oracle-gap": cmd_oracle_gap,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = C.load_file(args.config) if args.config else {}
        raw = C._merge(raw, _overrides(args))
        cfg = C.resolve(raw, profile=args.profile, seed=args.seed, out_dir=args.out_dir)
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        C.dump(cfg, out / "config.yaml")
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

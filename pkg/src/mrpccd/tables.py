"""Deterministic CSV writers shared by the backtest, CLI and oracle reports.

Floats are written with the shortest round-trip representation so the same
numbers always produce the same bytes.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError


def write_frame(frame, path, index=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, lineterminator="\n")
    return path


def write_matrix(m, assets, path):
    """Square matrix with the asset list as header and first column."""
    frame = pd.DataFrame(np.asarray(m, dtype=float), index=list(assets), columns=list(assets))
    frame.index.name = "asset"
    return write_frame(frame, path, index=True)


def read_matrix(path):
    """Inverse of :func:`write_matrix`: returns ``(matrix, assets)``."""
    try:
        frame = pd.read_csv(path, index_col=0, float_precision="round_trip")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read matrix {path}: {exc}") from exc
    if list(frame.index.astype(str)) != list(frame.columns):
        raise DataError(f"{path}: row and column labels differ")
    return frame.to_numpy(dtype=float), tuple(frame.columns)


def write_problem(problem, assets, path):
    """``kind``, ``beta`` and ``support`` as comment lines, then ``M``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = [assets[i] for i in problem.support]
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# kind={problem.kind}\n# beta={problem.beta!r}\n")
        fh.write(f"# support={';'.join(labels)}\n")
        problem.to_frame(assets).rename_axis("asset").to_csv(fh, lineterminator="\n")
    return path

"""OHLCV panels, CSV ingestion, resampling and the per-asset endogenous features."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError

PRICE_FIELDS = ("open", "high", "low", "close")

FEATURE_NAMES = (
    "one", "as_d", "as_w", "as_m",
    "r_d", "r_w", "r_m",
    "r_low", "ch", "cohl",
    "r_d_plus", "r_d_minus", "r_w_plus", "r_w_minus", "r_m_plus", "r_m_minus",
)
N_FEATURES = len(FEATURE_NAMES)


def _ohlc_violations(o, h, l, c):
    bad = (l > np.minimum(o, c)) | (h < np.maximum(o, c))
    bad |= ~((o > 0) & (h > 0) & (l > 0) & (c > 0))
    return bad


@dataclass(frozen=True, eq=False)
class PricePanel:
    """Time-aligned OHLCV prices: arrays are ``(T, N)`` with rows = timestamps."""

    assets: tuple
    timestamps: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "assets", tuple(str(a) for a in self.assets))
        ts = np.asarray(self.timestamps).astype("datetime64[D]")
        object.__setattr__(self, "timestamps", ts)
        shape = (len(ts), len(self.assets))
        for name in PRICE_FIELDS + ("volume",):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != shape:
                raise DataError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains missing or non-finite cells")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(set(self.assets)) != len(self.assets):
            raise DataError("duplicate asset identifiers")
        if len(ts) > 1 and not np.all(ts[1:] > ts[:-1]):
            raise DataError("timestamps must be strictly increasing")
        bad = _ohlc_violations(self.open, self.high, self.low, self.close)
        if bad.any():
            t, j = map(int, np.argwhere(bad)[0])
            raise DataError(f"OHLC ordering violated at time index {t}, asset {self.assets[j]!r}")
        if self.volume is not None and np.any(self.volume < 0):
            raise DataError("negative volume")

    @property
    def shape(self):
        return self.close.shape

    @property
    def n_assets(self):
        return len(self.assets)

    def __len__(self):
        return self.close.shape[0]

    def asset_index(self, asset):
        if isinstance(asset, (int, np.integer)):
            if not 0 <= asset < self.n_assets:
                raise DataError(f"asset index {asset} out of range")
            return int(asset)
        try:
            return self.assets.index(str(asset))
        except ValueError:
            raise DataError(f"unknown asset {asset!r}") from None

    def log_close(self):
        return np.log(self.close)

    def truncate(self, stop):
        """Rows ``[0, stop)``."""
        return self.take(slice(0, stop))

    def take(self, rows):
        vol = None if self.volume is None else self.volume[rows]
        return PricePanel(self.assets, self.timestamps[rows], self.open[rows], self.high[rows],
                          self.low[rows], self.close[rows], vol)

    def select(self, assets):
        idx = [self.asset_index(a) for a in assets]
        vol = None if self.volume is None else self.volume[:, idx]
        return PricePanel(tuple(self.assets[i] for i in idx), self.timestamps, self.open[:, idx],
                          self.high[:, idx], self.low[:, idx], self.close[:, idx], vol)

    def equals(self, other):
        if self.assets != other.assets or not np.array_equal(self.timestamps, other.timestamps):
            return False
        if (self.volume is None) != (other.volume is None):
            return False
        names = PRICE_FIELDS + (("volume",) if self.volume is not None else ())
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)

    def to_frame(self):
        """Long layout: one row per (date, asset)."""
        t, n = self.shape
        data = {
            "date": np.repeat(np.datetime_as_string(self.timestamps, unit="D"), n),
            "asset": np.tile(np.array(self.assets, dtype=object), t),
        }
        for name in PRICE_FIELDS:
            data[name] = getattr(self, name).ravel()
        if self.volume is not None:
            data["volume"] = self.volume.ravel()
        return pd.DataFrame(data)


@dataclass(frozen=True)
class CsvLayout:
    """Declared CSV column layout.

    ``kind="long"``: one row per (date, asset) with the columns named in
    ``columns``.  ``kind="wide"``: one row per date, and for each asset in
    ``assets`` the columns ``pattern.format(asset=..., field=...)``.
    """

    kind: str = "long"
    date: str = "date"
    asset: str = "asset"
    columns: dict = field(default_factory=lambda: {f: f for f in PRICE_FIELDS + ("volume",)})
    assets: Optional[tuple] = None
    pattern: str = "{asset}_{field}"

    def __post_init__(self):
        if self.kind not in ("long", "wide"):
            raise ConfigError(f"unknown CSV layout {self.kind!r}")
        if self.kind == "wide" and not self.assets:
            raise ConfigError("wide layout requires the asset list to be declared")
        unknown = set(self.columns) - set(PRICE_FIELDS + ("volume",))
        if unknown:
            raise ConfigError(f"unknown column roles {sorted(unknown)}")


def _read_csv(path):
    if not os.path.exists(path):
        raise DataError(f"data file not found: {path}")
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc


def _parse_dates(values, path):
    try:
        return pd.to_datetime(values, format="ISO8601").values.astype("datetime64[D]")
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: unparseable date: {exc}") from exc


def _check_rows(frame, cols, path):
    """Validate numeric OHLC rows; ``cols`` maps role -> column name."""
    vals = {}
    for role in PRICE_FIELDS:
        col = cols[role]
        try:
            vals[role] = pd.to_numeric(frame[col]).to_numpy(dtype=float)
        except (ValueError, TypeError) as exc:
            raise DataError(f"{path}: non-numeric value in column {col!r}: {exc}") from exc
    present = np.all([np.isfinite(v) for v in vals.values()], axis=0)
    bad = _ohlc_violations(vals["open"], vals["high"], vals["low"], vals["close"]) & present
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataError(f"{path}: OHLC ordering violated in data row {row} "
                        f"(open={vals['open'][row]}, high={vals['high'][row]}, "
                        f"low={vals['low'][row]}, close={vals['close'][row]})")
    return vals, present


def load_panel(path, layout=None):
    """Read a CSV into an intersection-aligned :class:`PricePanel`.

    Dates not present for every asset are dropped.  Rows violating the OHLC
    ordering raise :class:`DataError` naming the zero-based data row.
    """
    layout = layout or CsvLayout()
    frame = _read_csv(path)
    cols = dict(layout.columns)
    if layout.kind == "long":
        need = [layout.date, layout.asset] + [cols[f] for f in PRICE_FIELDS]
        missing = [c for c in need if c not in frame.columns]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        dup = frame.duplicated([layout.date, layout.asset], keep="first")
        if dup.any():
            row = int(np.flatnonzero(dup.to_numpy())[0])
            raise DataError(f"{path}: duplicate (date, asset) key in data row {row}")
        vals, present = _check_rows(frame, cols, path)
        dates = _parse_dates(frame[layout.date], path)
        asset_col = frame[layout.asset].astype(str).to_numpy()
        has_vol = cols.get("volume") in frame.columns
        tidy = pd.DataFrame({"date": dates, "asset": asset_col, **vals})
        if has_vol:
            tidy["volume"] = pd.to_numeric(frame[cols["volume"]]).to_numpy(dtype=float)
        tidy = tidy[present]
        assets = tuple(pd.unique(asset_col)) if layout.assets is None else tuple(layout.assets)
        wide = {}
        fields_ = PRICE_FIELDS + (("volume",) if has_vol else ())
        for f in fields_:
            wide[f] = tidy.pivot(index="date", columns="asset", values=f).reindex(columns=list(assets))
    else:
        if layout.date not in frame.columns:
            raise DataError(f"{path}: missing date column {layout.date!r}")
        assets = tuple(layout.assets)
        wide = {}
        has_vol = "volume" in cols and all(
            layout.pattern.format(asset=a, field=cols["volume"]) in frame.columns for a in assets)
        fields_ = PRICE_FIELDS + (("volume",) if has_vol else ())
        dates = _parse_dates(frame[layout.date], path)
        if pd.Index(dates).duplicated().any():
            row = int(np.flatnonzero(pd.Index(dates).duplicated())[0])
            raise DataError(f"{path}: duplicate date in data row {row}")
        for a in assets:
            group = {f: layout.pattern.format(asset=a, field=cols[f]) for f in fields_}
            missing = [c for c in group.values() if c not in frame.columns]
            if missing:
                raise DataError(f"{path}: missing columns {missing}")
            _check_rows(frame.rename(columns={v: k for k, v in group.items()}),
                        {f: f for f in PRICE_FIELDS}, path)
        for f in fields_:
            block = {a: pd.to_numeric(frame[layout.pattern.format(asset=a, field=cols[f])]).to_numpy(dtype=float)
                     for a in assets}
            wide[f] = pd.DataFrame(block, index=dates)
    common = np.ones(len(wide["close"]), dtype=bool)
    for f in fields_:
        common &= wide[f].notna().all(axis=1).to_numpy()
    index = wide["close"].index[common]
    order = np.argsort(index.values, kind="stable")
    arrays = {f: wide[f].loc[index].to_numpy(dtype=float)[order] for f in fields_}
    if len(index) == 0:
        raise DataError(f"{path}: assets share no common dates")
    return PricePanel(assets, np.asarray(index.values)[order], arrays["open"], arrays["high"],
                      arrays["low"], arrays["close"], arrays.get("volume"))


def save_panel(panel, path):
    """Write ``panel`` in the long CSV layout accepted by :func:`load_panel`."""
    panel.to_frame().to_csv(path, index=False, lineterminator="\n")


def resample(panel, stride):
    """Aggregate consecutive blocks of ``stride`` rows into one bar.

    Blocks start at the first row; a trailing partial block is dropped.  The
    bar takes the block's first open, max high, min low, last close, summed
    volume and last timestamp.
    """
    if int(stride) != stride or stride < 1:
        raise ConfigError("stride must be a positive integer")
    stride = int(stride)
    t = len(panel)
    if stride > t:
        raise DataError(f"stride {stride} exceeds series length {t}")
    if stride == 1:
        return panel
    nb = t // stride
    cut = nb * stride

    def blocks(a):
        return a[:cut].reshape(nb, stride, -1)

    vol = None if panel.volume is None else blocks(panel.volume).sum(axis=1)
    return PricePanel(
        panel.assets,
        panel.timestamps[stride - 1:cut:stride],
        blocks(panel.open)[:, 0, :],
        blocks(panel.high).max(axis=1),
        blocks(panel.low).min(axis=1),
        blocks(panel.close)[:, -1, :],
        vol,
    )


@dataclass(frozen=True)
class Horizons:
    d: int = 1
    w: int = 5
    m: int = 21

    def __post_init__(self):
        if not 1 <= self.d <= self.w <= self.m:
            raise ConfigError("horizons must satisfy 1 <= d <= w <= m")

    def as_tuple(self):
        return (self.d, self.w, self.m)


@dataclass(frozen=True)
class FeatureVector:
    one: float
    as_d: float
    as_w: float
    as_m: float
    r_d: float
    r_w: float
    r_m: float
    r_low: float
    ch: float
    cohl: float
    r_d_plus: float
    r_d_minus: float
    r_w_plus: float
    r_w_minus: float
    r_m_plus: float
    r_m_minus: float

    def as_array(self):
        return np.array([getattr(self, f.name) for f in fields(self)])


def _ew_weights(h, decay):
    w = decay ** np.arange(h)  # w[0] applies to the newest point
    return w / w.sum()


def _intraday(o, h, l, c):
    rng = h - l
    if rng > 0:
        return (h - c) / rng - 0.5, (c - o) / rng
    return -0.5, 0.0


def warmup(horizons=Horizons()):
    """First time index at which every feature is defined."""
    return max(horizons.m, 1)


def features(panel, asset, t, horizons=Horizons(), decay=0.98):
    """Endogenous regressors of ``asset`` at row ``t`` (uses rows ``<= t`` only).

    Averaged prices are exponentially weighted means of log closes over the
    last ``h`` rows with retention ``decay``.  A bar with ``high == low`` has
    ``ch = -0.5`` and ``cohl = 0``.
    """
    j = panel.asset_index(asset)
    if t < warmup(horizons) or t >= len(panel):
        raise DataError(f"time index {t} outside [{warmup(horizons)}, {len(panel)})")
    logc = np.log(panel.close[: t + 1, j])
    vals = {"one": 1.0}
    for tag, h in zip("dwm", horizons.as_tuple()):
        window = logc[t - h + 1: t + 1][::-1]
        vals[f"as_{tag}"] = float(_ew_weights(h, decay) @ window)
        r = float(logc[t] - logc[t - h])
        vals[f"r_{tag}"] = r
        vals[f"r_{tag}_plus"] = max(r, 0.0)
        vals[f"r_{tag}_minus"] = min(r, 0.0)
    vals["r_low"] = float(np.log(panel.low[t, j]) - np.log(panel.low[t - 1, j]))
    vals["ch"], vals["cohl"] = _intraday(panel.open[t, j], panel.high[t, j], panel.low[t, j], panel.close[t, j])
    return FeatureVector(**{name: vals[name] for name in FEATURE_NAMES})


def feature_matrix(panel, horizons=Horizons(), decay=0.98):
    """All feature vectors at once: ``(T, N, 16)``, NaN before the warm-up row."""
    t_len, n = panel.shape
    logc = panel.log_close()
    out = np.full((t_len, n, N_FEATURES), np.nan)
    t0 = warmup(horizons)
    if t_len <= t0:
        return out
    rows = slice(t0, t_len)
    out[rows, :, 0] = 1.0
    for k, h in enumerate(horizons.as_tuple()):
        w = _ew_weights(h, decay)
        avg = np.zeros((t_len - t0, n))
        for i in range(h):
            avg += w[i] * logc[t0 - i: t_len - i]
        out[rows, :, 1 + k] = avg
        r = logc[t0:] - logc[t0 - h: t_len - h]
        out[rows, :, 4 + k] = r
        out[rows, :, 10 + 2 * k] = np.maximum(r, 0.0)
        out[rows, :, 11 + 2 * k] = np.minimum(r, 0.0)
    lowlog = np.log(panel.low)
    out[rows, :, 7] = lowlog[t0:] - lowlog[t0 - 1: t_len - 1]
    o, h, l, c = (getattr(panel, f)[t0:] for f in PRICE_FIELDS)
    rng = h - l
    flat = rng <= 0
    safe = np.where(flat, 1.0, rng)
    out[rows, :, 8] = np.where(flat, -0.5, (h - c) / safe - 0.5)
    out[rows, :, 9] = np.where(flat, 0.0, (c - o) / safe)
    return out

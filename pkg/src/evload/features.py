"""Daily feature engineering from a cleaned interval series.

Daily aggregates (non-zero count, mean, max of the interval avg_kwh
signal) are max-normalized, then combined into correlation products,
their time derivatives and count/intensity ratios.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from datetime import date
from typing import IO

import numpy as np

from .errors import (
    DegenerateChannelWarning,
    EmptySeriesError,
    LengthMismatchError,
    WindowTooLargeError,
)
from .ingest import StationSeries, iter_days

FEATURE_COLUMNS = ("nnc", "na", "nm", "crr", "crrd", "crrm", "crrmd", "r", "rm")
EXTRA_COLUMN = "da"
BOUNDED_COLUMNS = ("nnc", "na", "nm", "crr", "crrm")
# normalized column -> normalization_maxima key
DENORMALIZE = {"nnc": "nc", "na": "da", "nm": "dm"}
DEFAULT_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class DailyAggregates:
    """Per-day NC, DA, DM and interval count, stored column-wise."""

    days: tuple[date, ...]
    nc: np.ndarray
    da: np.ndarray
    dm: np.ndarray
    n_t: np.ndarray

    def __len__(self) -> int:
        return len(self.days)


def aggregate_daily(series: StationSeries) -> DailyAggregates:
    if len(series) == 0:
        raise EmptySeriesError("series has no records")
    raw = np.asarray(series.avg_kwh, dtype=float)
    days, nc, da, dm, n_t = [], [], [], [], []
    for day, sl in iter_days(series):
        chunk = raw[sl]
        days.append(day)
        nc.append(np.count_nonzero(chunk > 0))
        da.append(chunk.mean())
        dm.append(chunk.max())
        n_t.append(len(chunk))
    return DailyAggregates(
        tuple(days),
        np.array(nc, dtype=float),
        np.array(da, dtype=float),
        np.array(dm, dtype=float),
        np.array(n_t, dtype=int),
    )


def _normalize(channel: np.ndarray, name: str) -> tuple[np.ndarray, float]:
    peak = float(np.max(channel))
    if peak <= 0:
        warnings.warn(f"channel {name} is identically zero", DegenerateChannelWarning, stacklevel=3)
        return np.zeros_like(channel, dtype=float), 0.0
    return channel / peak, peak


def normalize_daily(agg: DailyAggregates):
    """Divide NC, DA, DM by their maxima over the full span.

    Returns ``(nnc, na, nm, maxima)`` where ``maxima`` has keys nc, da, dm.
    """
    nnc, max_nc = _normalize(agg.nc, "nc")
    na, max_da = _normalize(agg.da, "da")
    nm, max_dm = _normalize(agg.dm, "dm")
    return nnc, na, nm, {"nc": max_nc, "da": max_da, "dm": max_dm}


def time_derivative(x: np.ndarray, dt: float = 1.0) -> np.ndarray:
    """Central differences inside, one-sided differences at both ends."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return np.zeros_like(x)
    d = np.empty_like(x)
    d[1:-1] = (x[2:] - x[:-2]) / (2 * dt)
    d[0] = (x[1] - x[0]) / dt
    d[-1] = (x[-1] - x[-2]) / dt
    return d


def _check_lengths(*cols):
    if len({len(c) for c in cols}) != 1:
        raise LengthMismatchError(f"column lengths differ: {[len(c) for c in cols]}")


def correlation_signals(nnc, na, nm):
    """Return ``(crr, crrm, crrd, crrmd)``; derivatives are per day."""
    _check_lengths(nnc, na, nm)
    nnc, na, nm = (np.asarray(c, dtype=float) for c in (nnc, na, nm))
    crr = nnc * na
    crrm = nnc * nm
    return crr, crrm, time_derivative(crr), time_derivative(crrm)


def ratio_signals(nnc, na, nm, eps: float = DEFAULT_EPS):
    if eps <= 0:
        raise ValueError("eps must be positive")
    _check_lengths(nnc, na, nm)
    nnc, na, nm = (np.asarray(c, dtype=float) for c in (nnc, na, nm))
    r = np.clip(nnc / np.maximum(na, eps), 0.0, 1.0 / eps)
    rm = np.clip(nnc / np.maximum(nm, eps), 0.0, 1.0 / eps)
    return r, rm


def rolling_average(column, window: int) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` points average everything seen so far."""
    x = np.asarray(column, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    if window > len(x):
        raise WindowTooLargeError(f"window {window} exceeds series length {len(x)}")
    out = np.empty_like(x)
    for i in range(len(x)):
        lo = max(0, i - window + 1)
        out[i] = x[lo:i + 1].mean()
    return out


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    days: tuple[date, ...]
    values: np.ndarray  # (n_days, n_columns)
    columns: tuple[str, ...]
    normalization_maxima: dict

    def __len__(self) -> int:
        return len(self.days)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def denormalize(self, values: np.ndarray | None = None) -> np.ndarray:
        """Undo max-normalization on nnc/na/nm along the last axis; other columns pass through."""
        out = np.array(self.values if values is None else values, dtype=float, copy=True)
        for col, key in DENORMALIZE.items():
            if col in self.columns:
                out[..., self.columns.index(col)] *= self.normalization_maxima[key]
        return out

    def to_csv(self, out: IO[str]) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("date", *self.columns))
        for day, row in zip(self.days, self.values):
            writer.writerow((day.isoformat(), *(repr(float(v)) for v in row)))

    def to_json(self) -> str:
        doc = {
            "columns": list(self.columns),
            "normalization_maxima": self.normalization_maxima,
            "days": [d.isoformat() for d in self.days],
            "values": self.values.tolist(),
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_csv(cls, source: IO[str], normalization_maxima: dict | None = None) -> "FeatureMatrix":
        reader = csv.reader(source)
        header = next(reader)
        if not header or header[0] != "date":
            raise ValueError("feature CSV must start with a 'date' column")
        days, rows = [], []
        for row in reader:
            if not row:
                continue
            days.append(date.fromisoformat(row[0]))
            rows.append([float(v) for v in row[1:]])
        values = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
        return cls(tuple(days), values, tuple(header[1:]), dict(normalization_maxima or {}))

    @classmethod
    def from_json(cls, text: str) -> "FeatureMatrix":
        doc = json.loads(text)
        values = np.array(doc["values"], dtype=float).reshape(len(doc["days"]), len(doc["columns"]))
        return cls(
            tuple(date.fromisoformat(d) for d in doc["days"]),
            values,
            tuple(doc["columns"]),
            dict(doc["normalization_maxima"]),
        )


def build_feature_matrix(series: StationSeries, eps: float = DEFAULT_EPS,
                         include_raw_da: bool = False) -> FeatureMatrix:
    """Daily aggregation, normalization, correlations and ratios in one step.

    With ``include_raw_da`` an un-normalized daily average column ``da`` is
    appended as a tenth feature.
    """
    agg = aggregate_daily(series)
    nnc, na, nm, maxima = normalize_daily(agg)
    crr, crrm, crrd, crrmd = correlation_signals(nnc, na, nm)
    r, rm = ratio_signals(nnc, na, nm, eps)
    named = {"nnc": nnc, "na": na, "nm": nm, "crr": crr, "crrd": crrd,
             "crrm": crrm, "crrmd": crrmd, "r": r, "rm": rm}
    columns = FEATURE_COLUMNS
    if include_raw_da:
        named[EXTRA_COLUMN] = agg.da
        columns = columns + (EXTRA_COLUMN,)
    values = np.column_stack([named[c] for c in columns])
    return FeatureMatrix(agg.days, values, columns, maxima)

"""Loading and cleaning of raw 15-minute charging-station CSV files.

The expected input has a header row and one row per interval::

    timestamp,avg_kwh,peak_kwh,last_kwh
    2023-01-02T00:00,0.0,0.0,0.0
    2023-01-02 00:15,1.2,3.4,0.9

Column names are configurable through a :class:`Schema`. Timestamps are
naive local time, minute resolution. Empty value cells are read as missing
(NaN) and filled later by :func:`interpolate_missing`.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import (
    AllMissingError,
    DuplicateTimestampError,
    EmptyInputError,
    InvalidConfigError,
    IrregularSamplingError,
    MalformedHeaderError,
)

logger = logging.getLogger(__name__)

SAMPLE_PERIOD = timedelta(minutes=15)
VALUE_FIELDS = ("avg_kwh", "peak_kwh", "last_kwh")
_TIMESTAMP_FORMATS = ("%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S")


class Flag(str, Enum):
    MEASURED = "measured"
    INTERPOLATED = "interpolated"
    CLIPPED = "clipped"


@dataclass(frozen=True)
class Schema:
    """Maps RawRecord field names to CSV column names."""

    timestamp: str = "timestamp"
    avg_kwh: str = "avg_kwh"
    peak_kwh: str = "peak_kwh"
    last_kwh: str = "last_kwh"
    flag: str = "flag"  # optional column, only present in cleaned output

    @classmethod
    def from_mapping(cls, mapping: dict[str, str] | None) -> "Schema":
        unknown = set(mapping or {}) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfigError(f"unknown schema fields: {sorted(unknown)}")
        return cls(**(mapping or {}))


@dataclass(frozen=True)
class RawRecord:
    timestamp: datetime
    avg_kwh: float
    peak_kwh: float
    last_kwh: float
    station_id: str


@dataclass(frozen=True)
class RejectedRow:
    line: int
    text: str
    reason: str


@dataclass(frozen=True, eq=False)
class StationSeries:
    """Time-ordered interval measurements for one charging location.

    Values are stored column-wise; ``records`` gives the row view.
    """

    station_id: str
    timestamps: tuple[datetime, ...]
    avg_kwh: np.ndarray
    peak_kwh: np.ndarray
    last_kwh: np.ndarray
    flags: tuple[Flag, ...]
    sample_period: timedelta = SAMPLE_PERIOD
    rejected: tuple[RejectedRow, ...] = field(default=())

    def __post_init__(self):
        n = len(self.timestamps)
        for name in VALUE_FIELDS:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.flags) != n:
            raise ValueError("flags length differs from timestamps")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StationSeries):
            return NotImplemented
        return (
            self.station_id == other.station_id
            and self.timestamps == other.timestamps
            and self.flags == other.flags
            and self.sample_period == other.sample_period
            and all(
                np.array_equal(getattr(self, f), getattr(other, f), equal_nan=True)
                for f in VALUE_FIELDS
            )
        )

    @property
    def records(self) -> list[RawRecord]:
        return [
            RawRecord(t, float(a), float(p), float(l), self.station_id)
            for t, a, p, l in zip(self.timestamps, self.avg_kwh, self.peak_kwh, self.last_kwh)
        ]

    def count(self, flag: Flag) -> int:
        return sum(1 for f in self.flags if f is flag)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    for fmt in _TIMESTAMP_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise ValueError(f"unrecognised timestamp {text!r}")


def _parse_value(text: str) -> float:
    text = text.strip()
    if text == "" or text.lower() in ("nan", "na", "null"):
        return float("nan")
    return float(text)


def parse_csv(source: IO[bytes] | IO[str] | bytes | str, schema: Schema | None = None,
              station_id: str = "station") -> StationSeries:
    """Parse a charging CSV into a :class:`StationSeries` sorted by timestamp.

    Rows whose timestamp or values cannot be parsed are kept in
    ``series.rejected`` and logged; they never vanish silently.
    """
    schema = schema or Schema()
    if isinstance(source, bytes):
        text = source.decode("utf-8-sig")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw

    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyInputError("input has no header row") from None

    wanted = {"timestamp": schema.timestamp, **{f: getattr(schema, f) for f in VALUE_FIELDS}}
    missing = [col for col in wanted.values() if col not in header]
    if missing:
        raise MalformedHeaderError(f"missing column(s): {', '.join(missing)}")
    idx = {name: header.index(col) for name, col in wanted.items()}
    flag_idx = header.index(schema.flag) if schema.flag in header else None

    rows: list[tuple[datetime, float, float, float, Flag]] = []
    rejected: list[RejectedRow] = []
    n_data = 0
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        n_data += 1
        try:
            ts = parse_timestamp(row[idx["timestamp"]])
            vals = [_parse_value(row[idx[f]]) for f in VALUE_FIELDS]
            flag = Flag(row[flag_idx].strip()) if flag_idx is not None else Flag.MEASURED
        except (ValueError, IndexError) as exc:
            rejected.append(RejectedRow(lineno, ",".join(row), str(exc)))
            continue
        rows.append((ts, *vals, flag))

    if n_data == 0:
        raise EmptyInputError("input has no data rows")
    for r in rejected:
        logger.warning("line %d rejected: %s", r.line, r.reason)
    if not rows:
        raise EmptyInputError(f"all {len(rejected)} data rows were rejected")

    rows.sort(key=lambda r: r[0])
    for prev, cur in zip(rows, rows[1:]):
        if prev[0] == cur[0]:
            raise DuplicateTimestampError(cur[0].strftime("%Y-%m-%dT%H:%M"))

    cols = list(zip(*rows))
    return StationSeries(
        station_id=station_id,
        timestamps=tuple(cols[0]),
        avg_kwh=np.array(cols[1], dtype=float),
        peak_kwh=np.array(cols[2], dtype=float),
        last_kwh=np.array(cols[3], dtype=float),
        flags=tuple(cols[4]),
        rejected=tuple(rejected),
    )


def read_csv(path, schema: Schema | None = None, station_id: str | None = None) -> StationSeries:
    with open(path, "rb") as fh:
        return parse_csv(fh, schema, station_id=station_id or Path(path).stem)


def write_csv(series: StationSeries, out: IO[str], schema: Schema | None = None) -> None:
    """Serialize ``series`` with a trailing flag column. Floats use ``repr`` so parsing round-trips exactly."""
    schema = schema or Schema()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([schema.timestamp, schema.avg_kwh, schema.peak_kwh, schema.last_kwh, schema.flag])
    for ts, a, p, l, flag in zip(series.timestamps, series.avg_kwh, series.peak_kwh,
                                 series.last_kwh, series.flags):
        writer.writerow([ts.strftime("%Y-%m-%dT%H:%M"), _fmt(a), _fmt(p), _fmt(l), flag.value])


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def _slot_index(series: StationSeries) -> np.ndarray:
    t0 = series.timestamps[0]
    period = series.sample_period
    idx = []
    for ts in series.timestamps:
        q, r = divmod(ts - t0, period)
        if r:
            raise IrregularSamplingError(f"{ts} is not on the {period} grid starting at {t0}")
        idx.append(q)
    return np.array(idx, dtype=np.int64)


def _fill_linear(values: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Linear interpolation over unknown slots; leading/trailing unknowns hold the nearest known value."""
    x = np.arange(len(values))
    # np.interp clamps outside [x_first_known, x_last_known], i.e. no extrapolation
    return np.interp(x, x[known], values[known])


def interpolate_missing(series: StationSeries) -> StationSeries:
    """Fill every grid slot between the first and last timestamp.

    Filled slots (absent rows or NaN cells) get linearly interpolated values
    and the ``interpolated`` flag. The grid is never extended past the
    original endpoints.
    """
    slots = _slot_index(series)
    n = int(slots[-1]) + 1
    grid = [series.timestamps[0] + k * series.sample_period for k in range(n)]
    flags = [Flag.INTERPOLATED] * n
    for k, f in zip(slots, series.flags):
        flags[k] = f

    out = {}
    for name in VALUE_FIELDS:
        col = np.full(n, np.nan)
        col[slots] = getattr(series, name)
        known = ~np.isnan(col)
        if not known.any():
            raise AllMissingError(f"{name} has no measured values")
        for k in np.flatnonzero(~known):
            flags[k] = Flag.INTERPOLATED
        out[name] = _fill_linear(col, known)

    result = replace(series, timestamps=tuple(grid), flags=tuple(flags), **out)
    n_filled = result.count(Flag.INTERPOLATED) - series.count(Flag.INTERPOLATED)
    if n_filled:
        logger.info("%s: interpolated %d slot(s)", series.station_id, n_filled)
    return result


@dataclass(frozen=True)
class Bounds:
    min: float = 0.0
    max: float = float("inf")

    def __post_init__(self):
        if self.min < 0 or not self.max > self.min:
            raise ValueError(f"invalid bounds [{self.min}, {self.max}]")


def filter_anomalies(series: StationSeries, bounds: Bounds) -> StationSeries:
    """Replace out-of-bounds readings by interpolation and flag them ``clipped``.

    Also enforces peak >= avg. If a column has no in-bounds reading at all,
    its values are clipped to the bounds instead. The number of clipped
    readings is logged and available as ``result.count(Flag.CLIPPED)``.
    """
    n = len(series)
    bad_any = np.zeros(n, dtype=bool)
    out = {}
    for name in VALUE_FIELDS:
        col = np.asarray(getattr(series, name), dtype=float)
        bad = ~((col >= bounds.min) & (col <= bounds.max))  # NaN counts as bad
        if bad.all():
            fixed = np.clip(np.nan_to_num(col, nan=bounds.min), bounds.min, bounds.max)
        elif bad.any():
            fixed = _fill_linear(col, ~bad)
        else:
            fixed = col
        out[name] = fixed
        bad_any |= bad

    low_peak = out["peak_kwh"] < out["avg_kwh"]
    out["peak_kwh"] = np.where(low_peak, out["avg_kwh"], out["peak_kwh"])
    bad_any |= low_peak

    flags = tuple(Flag.CLIPPED if b else f for b, f in zip(bad_any, series.flags))
    n_clipped = int(bad_any.sum())
    if n_clipped:
        logger.info("%s: clipped %d reading(s) outside [%g, %g]",
                    series.station_id, n_clipped, bounds.min, bounds.max)
    return replace(series, flags=flags, **out)


def clean(series: StationSeries, bounds: Bounds) -> StationSeries:
    """Interpolation followed by anomaly filtering."""
    return filter_anomalies(interpolate_missing(series), bounds)


def iter_days(series: StationSeries) -> Iterable[tuple]:
    """Yield ``(date, slice)`` pairs grouping consecutive records by calendar day."""
    start = 0
    for i in range(1, len(series) + 1):
        if i == len(series) or series.timestamps[i].date() != series.timestamps[start].date():
            yield series.timestamps[start].date(), slice(start, i)
            start = i

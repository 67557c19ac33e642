"""Synthetic 15-minute charging data with a known periodicity.

Each day has a demand level ``1 + amplitude * sin(2*pi*day / period)``.
The level sets both how many intervals around midday see charging and how
much energy each of them draws, so the count, average and maximum
channels all share the period. Per-interval readings get multiplicative
Gaussian noise of relative size ``noise``.

On top of the cycle, demand grows linearly by ``trend`` (relative) from
the first to the last day, as a station does while EV adoption rises.
With the default 0.5 the final days run at 1.5x the opening level, so the
chronologically last days sit above anything seen earlier in the year.
"""

from __future__ import annotations

import csv
from datetime import datetime, timedelta
from typing import IO

import numpy as np

from .ingest import SAMPLE_PERIOD

INTERVALS_PER_DAY = 96
DEFAULT_TREND = 0.5


def synth_intervals(days: int = 365, period: float = 7.0, noise: float = 0.05, seed: int = 0,
                    amplitude: float = 0.6, trend: float = DEFAULT_TREND, peak_kwh: float = 40.0,
                    start: datetime = datetime(2023, 1, 1)):
    """Return ``(timestamps, avg, peak, last)`` arrays for ``days`` whole days."""
    rng = np.random.default_rng(seed)
    slot = np.arange(INTERVALS_PER_DAY)
    centre = INTERVALS_PER_DAY / 2
    avg, peak, last = [], [], []
    for d in range(days):
        growth = 1.0 + trend * d / max(days - 1, 1)
        level = growth * (1.0 + amplitude * np.sin(2 * np.pi * d / period))
        half_width = 12.0 * level  # active window of 24 * level intervals (6 h * level)
        active = np.abs(slot + 0.5 - centre) < half_width
        shape = np.cos(0.5 * np.pi * (slot + 0.5 - centre) / max(half_width, 1e-9)) ** 2
        base = peak_kwh / (1 + amplitude) * level * shape * active
        noisy = base * (1.0 + noise * rng.standard_normal(INTERVALS_PER_DAY))
        noisy = np.clip(noisy, 0.0, None) * active
        avg.append(noisy)
        peak.append(noisy * 1.25)
        last.append(noisy * 0.9)
    timestamps = [start + k * SAMPLE_PERIOD for k in range(days * INTERVALS_PER_DAY)]
    return timestamps, np.concatenate(avg), np.concatenate(peak), np.concatenate(last)


def write_synth_csv(out: IO[str], **kwargs) -> None:
    timestamps, avg, peak, last = synth_intervals(**kwargs)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("timestamp", "avg_kwh", "peak_kwh", "last_kwh"))
    for ts, a, p, l in zip(timestamps, avg, peak, last):
        writer.writerow((ts.strftime("%Y-%m-%dT%H:%M"), repr(float(a)), repr(float(p)), repr(float(l))))


def synth_series(station_id: str = "synth", **kwargs):
    from .ingest import Flag, StationSeries

    timestamps, avg, peak, last = synth_intervals(**kwargs)
    return StationSeries(station_id, tuple(timestamps), avg, peak, last, (Flag.MEASURED,) * len(timestamps))

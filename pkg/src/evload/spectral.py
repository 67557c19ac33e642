"""Periodicity detection on a daily signal via a Hann-windowed DFT."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import IO

import numpy as np

from .errors import LengthTooShortError, NoPeaksError

# magnitudes at or below this are numerical noise, not peaks
PEAK_FLOOR = 1e-9


def hanning_window(n: int) -> np.ndarray:
    """Symmetric Hann window ``0.5 * (1 - cos(2*pi*t / (n - 1)))``."""
    if n < 2:
        raise LengthTooShortError(f"window length {n} < 2")
    t = np.arange(n)
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / (n - 1)))
    # exact symmetry regardless of cos rounding
    return 0.5 * (w + w[::-1])


def windowed(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=float)
    return (x - x.mean()) * hanning_window(len(x))


def fft_magnitude(signal) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude of the windowed DFT of the mean-removed signal.

    Returns ``(bins, magnitudes)`` for the positive-frequency bins
    ``1 .. n // 2``; bin ``f`` corresponds to a period of ``n / f`` samples.
    """
    x = np.asarray(signal, dtype=float)
    if len(x) < 4:
        raise LengthTooShortError(f"signal length {len(x)} < 4")
    spec = np.abs(np.fft.rfft(windowed(x)))
    bins = np.arange(len(spec))
    return bins[1:], spec[1:]


@dataclass(frozen=True)
class SpectrumReport:
    periods: list[float]
    magnitudes: list[float]
    max_period_considered: float = 30.0
    top_k: int = 3

    def to_json(self) -> str:
        return json.dumps({"periods": self.periods, "magnitudes": self.magnitudes,
                           "max_period_considered": self.max_period_considered,
                           "top_k": self.top_k}, indent=1)

    def to_csv(self, out: IO[str]) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("period_days", "magnitude"))
        for p, m in zip(self.periods, self.magnitudes):
            writer.writerow((repr(p), repr(m)))


def spectrum_csv(n: int, bins, magnitudes, out: IO[str], max_period: float | None = None) -> None:
    """Full period/magnitude curve for plotting."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("period_days", "magnitude"))
    for f, m in zip(bins, magnitudes):
        period = n / f
        if max_period is None or period <= max_period:
            writer.writerow((repr(float(period)), repr(float(m))))


def dominant_periods(n: int, bins, magnitudes, top_k: int = 3,
                     max_period: float = 30.0) -> SpectrumReport:
    """Strongest strict local maxima of the spectrum with period in (1, max_period].

    ``n`` is the signal length the spectrum was computed from. Ties on
    magnitude go to the longer period.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    bins = np.asarray(bins)
    mag = np.asarray(magnitudes, dtype=float)
    peaks = []
    # edge bins lack a neighbour on one side and never count as peaks
    for k in range(1, len(mag) - 1):
        m = mag[k]
        if m > mag[k - 1] and m > mag[k + 1] and m > PEAK_FLOOR:
            period = n / bins[k]
            if 1.0 < period <= max_period:
                peaks.append((m, period))
    if not peaks:
        raise NoPeaksError("spectrum has no local maxima within the period range")
    peaks.sort(key=lambda p: (-p[0], -p[1]))
    chosen = peaks[:top_k]
    return SpectrumReport([float(p) for _, p in chosen], [float(m) for m, _ in chosen],
                          float(max_period), top_k)


def analyze(signal, top_k: int = 3, max_period: float = 30.0) -> SpectrumReport:
    bins, mag = fft_magnitude(signal)
    return dominant_periods(len(signal), bins, mag, top_k, max_period)

"""Forecast accuracy metrics (R², MSE, RMSE, MAE) and report tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from . import lstm
from .errors import EmptySplitError, LengthMismatchError, ZeroVarianceError

REPORT_HEADER = ("horizon", "r2", "mse", "rmse", "mae")


@dataclass(frozen=True)
class MetricReport:
    r2: float
    mse: float
    rmse: float
    mae: float
    horizon: str = ""
    n_points: int = 0

    def row(self) -> tuple:
        return (self.horizon, repr(self.r2), repr(self.mse), repr(self.rmse), repr(self.mae))


def compute_metrics(pred, target, horizon: str = "") -> MetricReport:
    """Pooled metrics over all elements; R² uses the target mean as baseline."""
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if len(pred) != len(target) or len(pred) == 0:
        raise LengthMismatchError(f"pred has {len(pred)} points, target {len(target)}")
    resid = pred - target
    mse = float(np.mean(resid ** 2))
    mae = float(np.mean(np.abs(resid)))
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVarianceError("target is constant; R² is undefined")
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return MetricReport(r2, mse, math.sqrt(mse), mae, horizon, len(pred))


@dataclass(frozen=True)
class Evaluation:
    report: MetricReport
    abs_error: np.ndarray  # flattened |pred - target| over (sample, step, column)
    pred: np.ndarray
    target: np.ndarray


def evaluate_model(params: lstm.ModelParams, test, columns: Sequence[str],
                   target_columns: Sequence[str] = ("na",), horizon: str | None = None) -> Evaluation:
    """Metrics on the test windows, restricted to ``target_columns``."""
    if len(test) == 0:
        raise EmptySplitError("test set is empty")
    idx = [list(columns).index(c) for c in target_columns]
    pred = lstm.predict(test.x, params)[..., idx]
    target = np.asarray(test.y)[..., idx]
    label = horizon if horizon is not None else str(params.dims.prediction_steps)
    report = compute_metrics(pred, target, label)
    return Evaluation(report, np.abs(pred - target).ravel(), pred, target)


def tiled_forecast(ev: Evaluation, column: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Day-by-day forecast and truth built from every h-th test window.

    Consecutive windows taken with stride h cover disjoint days, so the
    result reads as one forecast series rather than overlapping repeats.
    """
    h = ev.pred.shape[1]
    return ev.pred[::h, :, column].ravel(), ev.target[::h, :, column].ravel()


def write_report(reports: Sequence[MetricReport], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for r in reports:
        writer.writerow(r.row())


def write_abs_error(abs_error, out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("step", "abs_error"))
    for k, e in enumerate(np.asarray(abs_error).ravel()):
        writer.writerow((k, repr(float(e))))

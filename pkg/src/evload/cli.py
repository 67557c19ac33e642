"""Command-line entry point: ``evload <subcommand> ...``.

Exit codes: 0 success, 1 domain error, 2 usage or I/O error. Every
subcommand accepts ``--config``, ``--seed`` and ``--out-dir`` (falling
back to ``$EVLOAD_OUT_DIR``, then the current directory). The default seed
is :data:`evload.train.DEFAULT_SEED`.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, features, gridval, ingest, spectral, synth
from .errors import EvloadError, ProfileMismatchError
from .evaluation import evaluate_model, tiled_forecast, write_abs_error, write_report
from .train import DEFAULT_SEED, Checkpoint, TrainConfig, predict_future, prepare_samples, train_loop

logger = logging.getLogger("evload")

MANIFEST_NAME = "manifest.json"


class UsageError(Exception):
    pass


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return doc


def train_config(args, cfg: dict) -> TrainConfig:
    doc = dict(cfg.get("train", {}))
    if args.seed is not None:
        doc["seed"] = args.seed
    for key in ("max_epochs", "multiplier", "hidden_dim"):
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if getattr(args, "preset", None):
        doc["preset"] = args.preset
    return TrainConfig.from_dict(doc)


class Run:
    """Tracks the files a subcommand writes and records them in a manifest."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        out = args.out_dir or os.environ.get("EVLOAD_OUT_DIR") or "."
        self.out_dir = Path(out)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return p

    def open(self, name: str):
        return open(self.path(name), "w", encoding="utf-8", newline="")

    def finish(self, inputs: list[str], seed: int | None = None) -> None:
        manifest_path = self.out_dir / MANIFEST_NAME
        manifest = {}
        if manifest_path.exists():
            try:
                manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                manifest = {}
        manifest.setdefault("tool_version", __version__)
        manifest.setdefault("stages", {})
        manifest["stages"][self.command] = {
            "config": self.args.config,
            "inputs": inputs,
            "seed": seed,
            "outputs": sorted(self.outputs),
        }
        manifest["output_dir"] = str(self.out_dir)
        manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _read_features(path: str) -> features.FeatureMatrix:
    p = Path(path)
    try:
        if p.suffix == ".json":
            return features.FeatureMatrix.from_json(p.read_text(encoding="utf-8"))
        with open(p, encoding="utf-8", newline="") as fh:
            fm = features.FeatureMatrix.from_csv(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    sidecar = p.with_suffix(".json")
    if sidecar.exists():
        maxima = json.loads(sidecar.read_text(encoding="utf-8"))["normalization_maxima"]
        fm = features.FeatureMatrix(fm.days, fm.values, fm.columns, maxima)
    return fm


def _read_checkpoint(path: str) -> Checkpoint:
    try:
        return Checkpoint.from_json(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc}") from None


def cmd_synth(args, cfg):
    run = Run(args, "synth")
    opts = cfg.get("synth", {})
    seed = args.seed if args.seed is not None else opts.get("seed", DEFAULT_SEED)
    kwargs = dict(days=args.days or opts.get("days", 365), period=args.period or opts.get("period", 7.0),
                  noise=args.noise if args.noise is not None else opts.get("noise", 0.05), seed=seed,
                  trend=args.trend if args.trend is not None else opts.get("trend", synth.DEFAULT_TREND))
    with run.open(args.output) as fh:
        synth.write_synth_csv(fh, **kwargs)
    run.finish([], seed)
    print(f"wrote {kwargs['days']} days to {run.out_dir / args.output}")


def cmd_preprocess(args, cfg):
    run = Run(args, "preprocess")
    opts = cfg.get("preprocess", {})
    schema = ingest.Schema.from_mapping(opts.get("schema"))
    max_kwh = args.max_kwh if args.max_kwh is not None else opts.get("max_kwh")
    if max_kwh is None:
        raise UsageError("an anomaly upper bound is required (--max-kwh or preprocess.max_kwh)")
    try:
        raw = ingest.read_csv(args.input, schema)
    except OSError as exc:
        raise UsageError(f"EmptyInput: cannot read {args.input}: {exc}") from None
    filled = ingest.interpolate_missing(raw)
    cleaned = ingest.filter_anomalies(filled, ingest.Bounds(opts.get("min_kwh", 0.0), max_kwh))
    with run.open("cleaned.csv") as fh:
        ingest.write_csv(cleaned, fh, schema)
    fm = features.build_feature_matrix(cleaned, opts.get("eps", features.DEFAULT_EPS),
                                       include_raw_da=opts.get("include_raw_da", False))
    with run.open("features.csv") as fh:
        fm.to_csv(fh)
    run.write_text("features.json", fm.to_json() + "\n")
    run.finish([args.input])
    n_interp = cleaned.count(ingest.Flag.INTERPOLATED)
    n_clip = cleaned.count(ingest.Flag.CLIPPED)
    print(f"records={len(cleaned)} interpolated={n_interp} clipped={n_clip} "
          f"rejected={len(raw.rejected)} days={len(fm)}")


def cmd_analyze(args, cfg):
    run = Run(args, "analyze")
    opts = cfg.get("analyze", {})
    fm = _read_features(args.features)
    column = args.column or opts.get("column", "crr")
    top_k = args.top_k or opts.get("top_k", 3)
    max_period = args.max_period or opts.get("max_period", 30.0)
    signal = fm[column]
    bins, mag = spectral.fft_magnitude(signal)
    with run.open("spectrum.csv") as fh:
        spectral.spectrum_csv(len(signal), bins, mag, fh, max_period)
    report = spectral.dominant_periods(len(signal), bins, mag, top_k, max_period)
    run.write_text("spectrum.json", report.to_json() + "\n")
    roll_col = opts.get("rolling_column", "na")
    for window in opts.get("windows", (7, 14, 30)):
        smooth = features.rolling_average(fm[roll_col], window)
        with run.open(f"rolling_{window}.csv") as fh:
            fh.write(f"date,{roll_col},rolling_{window}\n")
            for day, raw_v, s in zip(fm.days, fm[roll_col], smooth):
                fh.write(f"{day.isoformat()},{float(raw_v)!r},{float(s)!r}\n")
    run.finish([args.features])
    print("dominant periods (days): " + ", ".join(f"{p:.2f}" for p in report.periods))


def cmd_train(args, cfg):
    run = Run(args, "train")
    config = train_config(args, cfg)
    fm = _read_features(args.features)
    tr, va, _ = prepare_samples(fm, config)

    def progress(epoch, tl, vl):
        if epoch % 50 == 0:
            logger.info("epoch %d train %.6f val %.6f", epoch, tl, vl)

    result = train_loop(tr, va, config, progress=progress)
    best = result.best
    best.columns = fm.columns
    best.normalization_maxima = fm.normalization_maxima
    run.write_text("checkpoint.json", best.to_json() + "\n")
    run.write_text("loss_history.csv", result.history_csv())
    run.finish([args.features], config.seed)
    print(f"best epoch {best.epoch} val_loss {best.val_loss:.6g} after {len(result.history)} epochs")


def cmd_predict(args, cfg):
    run = Run(args, "predict")
    ckpt = _read_checkpoint(args.checkpoint)
    fm = _read_features(args.features)
    s = ckpt.params.dims.prediction_steps
    seq = ckpt.config.seq_length if ckpt.config else s
    maxima = fm.normalization_maxima or ckpt.normalization_maxima
    forecast = predict_future(fm.values[-seq:], ckpt, maxima, fm.columns)
    last = fm.days[-1]
    with run.open("forecast.csv") as fh:
        names = [features.DENORMALIZE.get(c, c) for c in fm.columns]
        fh.write("date," + ",".join(names) + "\n")
        for k, row in enumerate(forecast, start=1):
            fh.write((last + dt.timedelta(days=k)).isoformat() + "," + ",".join(repr(float(v)) for v in row) + "\n")
    run.finish([args.checkpoint, args.features], ckpt.config.seed if ckpt.config else None)
    print(f"forecast of {len(forecast)} days written")


def cmd_evaluate(args, cfg):
    run = Run(args, "evaluate")
    ckpt = _read_checkpoint(args.checkpoint)
    fm = _read_features(args.features)
    config = ckpt.config or train_config(args, cfg)
    _, _, test = prepare_samples(fm, config)
    columns = tuple(args.columns.split(",")) if args.columns else config.eval_columns
    ev = evaluate_model(ckpt.params, test, fm.columns, columns)
    with run.open("metrics.csv") as fh:
        write_report([ev.report], fh)
    with run.open("abs_error.csv") as fh:
        write_abs_error(ev.abs_error, fh)
    grid_buses = args.grid_buses if args.grid_buses is not None else cfg.get("evaluate", {}).get("grid_buses", 0)
    if grid_buses:
        _write_grid_inputs(run, ckpt, fm, test, grid_buses)
    run.finish([args.checkpoint, args.features], config.seed)
    r = ev.report
    print(f"horizon={r.horizon} r2={r.r2:.4f} mse={r.mse:.5f} rmse={r.rmse:.5f} mae={r.mae:.5f} n={r.n_points}")


def _write_grid_inputs(run: Run, ckpt: Checkpoint, fm: features.FeatureMatrix, test, n_buses: int) -> None:
    """Fixture feeder and load CSVs for the test-set daily-average forecast vs truth."""
    if "na" not in fm.columns or "da" not in fm.normalization_maxima:
        raise ProfileMismatchError("grid inputs need the na column and its da normalization maximum")
    ev = evaluate_model(ckpt.params, test, fm.columns, ("na",))
    pred, truth = tiled_forecast(ev)
    scale = fm.normalization_maxima["da"]
    case, actual, predicted = gridval.forecast_scenarios(truth * scale, pred * scale, n_buses)
    run.write_text("case.json", case.to_json() + "\n")
    with run.open("loads_actual.csv") as fh:
        gridval.write_loads_csv(*actual, case.bus_ids, fh)
    with run.open("loads_predicted.csv") as fh:
        gridval.write_loads_csv(*predicted, case.bus_ids, fh)


def cmd_gridcheck(args, cfg):
    run = Run(args, "gridcheck")
    try:
        case = gridval.GridCase.from_json(Path(args.case).read_text(encoding="utf-8"))
        with open(args.actual, encoding="utf-8", newline="") as fh:
            actual = gridval.read_loads_csv(fh, case)
        with open(args.predicted, encoding="utf-8", newline="") as fh:
            predicted = gridval.read_loads_csv(fh, case)
    except OSError as exc:
        raise UsageError(str(exc)) from None
    if actual[0].shape != predicted[0].shape:
        raise ProfileMismatchError(f"actual covers {actual[0].shape[0]} timesteps, predicted {predicted[0].shape[0]}")
    report = gridval.compare_profiles(case, actual, predicted)
    with run.open("deviation.csv") as fh:
        report.to_csv(fh)
    run.write_text("deviation_summary.json", json.dumps(report.summary(), indent=1, sort_keys=True) + "\n")
    run.finish([args.case, args.actual, args.predicted])
    print(f"max |dV| = {report.max_abs:.3e} pu at timestep {report.argmax_timestep}, bus {report.argmax_bus}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file driving all stages")
    common.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED})")
    common.add_argument("--out-dir", help="output directory (default $EVLOAD_OUT_DIR or .)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="evload", description="EV charging demand forecasting toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic 15-minute charging CSV")
    p.add_argument("--days", type=int)
    p.add_argument("--period", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--trend", type=float, help="relative demand growth over the whole series")
    p.add_argument("--output", default="synth.csv")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="clean a raw CSV and build daily features")
    p.add_argument("input")
    p.add_argument("--max-kwh", type=float, help="upper anomaly bound per interval")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("analyze", parents=[common], help="spectrum and rolling averages")
    p.add_argument("features")
    p.add_argument("--column")
    p.add_argument("--top-k", type=int)
    p.add_argument("--max-period", type=float)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", parents=[common], help="train the LSTM")
    p.add_argument("features")
    p.add_argument("--preset", choices=["weekly", "biweekly", "monthly", "seasonal"])
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--multiplier", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="forecast past the end of the features")
    p.add_argument("checkpoint")
    p.add_argument("features")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="test-set metrics")
    p.add_argument("checkpoint")
    p.add_argument("features")
    p.add_argument("--columns", help="comma-separated target columns (default from config)")
    p.add_argument("--grid-buses", dest="grid_buses", type=int,
                   help="also write case.json and load CSVs for a feeder with this many buses")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridcheck", parents=[common], help="voltage deviation between two load profiles")
    p.add_argument("case")
    p.add_argument("actual")
    p.add_argument("predicted")
    p.set_defaults(func=cmd_gridcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EvloadError as exc:
        print(f"error: {exc.name}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

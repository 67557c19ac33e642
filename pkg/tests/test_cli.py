import csv
import json
from pathlib import Path

import numpy as np
import pytest

from conftest import csv_bytes
from evload.cli import main
from evload.features import FEATURE_COLUMNS


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    assert run("synth", "--days", 60, "--out-dir", out) == 0
    assert run("preprocess", out / "synth.csv", "--max-kwh", 200, "--out-dir", out) == 0
    return out


def test_synth_and_preprocess_outputs(pipeline, capsys):
    with open(pipeline / "features.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["date", *FEATURE_COLUMNS]
    assert len(rows) == 61
    doc = json.loads((pipeline / "features.json").read_text())
    assert set(doc["normalization_maxima"]) == {"nc", "da", "dm"}
    manifest = json.loads((pipeline / "manifest.json").read_text())
    assert set(manifest["stages"]) == {"synth", "preprocess"}
    assert "features.csv" in manifest["stages"]["preprocess"]["outputs"]


def test_preprocess_reports_gaps(tmp_path, capsys):
    rows = [f"2024-03-04T00:{m:02d},{v},{v},{v}" for m, v in zip((0, 15, 30, 45), ("1.0", "", "", "4.0"))]
    src = tmp_path / "gaps.csv"
    src.write_bytes(csv_bytes(rows, "timestamp,avg_kwh,peak_kwh,last_kwh").getvalue())
    assert run("preprocess", src, "--max-kwh", 10, "--out-dir", tmp_path) == 0
    assert "interpolated=2" in capsys.readouterr().out


def test_preprocess_missing_file(tmp_path, capsys):
    assert run("preprocess", tmp_path / "nope.csv", "--max-kwh", 10, "--out-dir", tmp_path) == 2
    assert "EmptyInput" in capsys.readouterr().err


def test_preprocess_requires_bound(pipeline):
    assert run("preprocess", pipeline / "synth.csv", "--out-dir", pipeline / "x") == 2


def test_bad_usage_exit_code():
    assert run("train") == 2


def test_analyze_finds_weekly_period(pipeline, tmp_path):
    assert run("analyze", pipeline / "features.csv", "--out-dir", tmp_path) == 0
    report = json.loads((tmp_path / "spectrum.json").read_text())
    assert report["periods"][0] == pytest.approx(60 / 9, abs=0.5)
    for w in (7, 14, 30):
        assert (tmp_path / f"rolling_{w}.csv").exists()


def test_analyze_window_too_large(tmp_path, capsys):
    out = tmp_path / "short"
    assert run("synth", "--days", 20, "--out-dir", out) == 0
    assert run("preprocess", out / "synth.csv", "--max-kwh", 200, "--out-dir", out) == 0
    assert run("analyze", out / "features.csv", "--out-dir", out) == 1
    assert "WindowTooLarge" in capsys.readouterr().err


def test_analyze_constant_input(tmp_path, capsys):
    rows = [f"2024-03-{4 + d // 96:02d}T{(d % 96) // 4:02d}:{15 * (d % 4):02d},1.0,1.0,1.0" for d in range(96 * 16)]
    src = tmp_path / "flat.csv"
    src.write_bytes(csv_bytes(rows, "timestamp,avg_kwh,peak_kwh,last_kwh").getvalue())
    assert run("preprocess", src, "--max-kwh", 10, "--out-dir", tmp_path) == 0
    assert run("analyze", tmp_path / "features.csv", "--out-dir", tmp_path) == 1
    assert "NoPeaks" in capsys.readouterr().err


def full_run(features, out):
    args = ["--out-dir", out, "--seed", 7]
    assert run("train", features, "--max-epochs", 3, "--multiplier", 1, *args) == 0
    assert run("predict", out / "checkpoint.json", features, *args) == 0
    assert run("evaluate", out / "checkpoint.json", features, "--grid-buses", 5, *args) == 0
    assert run("gridcheck", out / "case.json", out / "loads_actual.csv", out / "loads_predicted.csv", *args) == 0


def test_full_pipeline_artifacts_and_determinism(pipeline, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    full_run(pipeline / "features.csv", a)
    full_run(pipeline / "features.csv", b)
    with open(a / "metrics.csv") as fh:
        assert fh.readline().strip() == "horizon,r2,mse,rmse,mae"
    forecast = (a / "forecast.csv").read_text().splitlines()
    assert len(forecast) == 8 and forecast[0].split(",")[:4] == ["date", "nc", "da", "dm"]
    history = (a / "loss_history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_loss,val_loss" and len(history) == 4
    summary = json.loads((a / "deviation_summary.json").read_text())
    assert np.isfinite(summary["max_abs_dv_pu"])
    for name in ("checkpoint.json", "loss_history.csv", "forecast.csv", "metrics.csv", "abs_error.csv",
                 "deviation.csv", "deviation_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_out_dir_from_environment(pipeline, tmp_path, monkeypatch):
    monkeypatch.setenv("EVLOAD_OUT_DIR", str(tmp_path / "env"))
    assert run("analyze", pipeline / "features.csv") == 0
    assert (tmp_path / "env" / "spectrum.json").exists()


def test_config_file_drives_stages(pipeline, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"analyze": {"column": "na", "top_k": 1, "windows": [7]}}))
    assert run("analyze", pipeline / "features.csv", "--config", cfg, "--out-dir", tmp_path) == 0
    assert json.loads((tmp_path / "spectrum.json").read_text())["top_k"] == 1
    assert not (tmp_path / "rolling_14.csv").exists()
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert run("analyze", pipeline / "features.csv", "--config", bad, "--out-dir", tmp_path) == 2

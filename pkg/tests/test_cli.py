import argparse
import json
import subprocess
import sys

import pytest

from skincal.cli import main, parse_filter
from skincal.geometry import forearm_layout, save_layout


@pytest.fixture(scope="module")
def calibrated(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["calibrate", "--seed", "3", "--noise", "off", "--out", str(out)]) == 0
    return out


def test_calibrate_writes_every_taxel(calibrated, capsys):
    doc = json.loads((calibrated / "calibration.json").read_text())
    assert len(doc["taxels"]) == 230
    for name in ("calibration_log.csv", "layout.json", "sim_config.json"):
        assert (calibrated / name).is_file()
    header = (calibrated / "calibration_log.csv").read_text().split("\n", 1)[0].split(",")
    assert header[:2] == ["t_s", "pressure_kpa"] and len(header) == 232


def test_calibrate_prints_summary(tmp_path, capsys):
    assert main(["calibrate", "--noise", "off", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["taxel", "rmse_kPa", "saturated"]
    assert len(lines) == 232
    assert "230 taxels fitted" in lines[-1]


def test_short_ramp_names_taxels(tmp_path, capsys):
    assert main(["calibrate", "--max-pressure", "5", "--noise", "off", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    listed = [line for line in err.splitlines() if line.startswith("taxels:")]
    assert listed and len(listed[0].split()) > 1


@pytest.mark.parametrize("value", ["0", "301", "-1"])
def test_max_pressure_range(tmp_path, value):
    assert main(["calibrate", "--max-pressure", value, "--out", str(tmp_path)]) == 2


def test_seed_must_be_u64(tmp_path):
    assert main(["simulate", "--seed", str(2 ** 64), "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--seed", "-1", "--out", str(tmp_path)]) == 2


def test_missing_input_is_io_error(tmp_path):
    assert main(["calibrate", "--log", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 3
    assert main(["validate", "--calibration", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 3


def test_recalibrate_from_log_reproduces_map(calibrated, tmp_path):
    assert main(["calibrate", "--log", str(calibrated / "calibration_log.csv"), "--seed", "3",
                 "--noise", "off", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "calibration.json").read_bytes() == (calibrated / "calibration.json").read_bytes()


def test_rerun_is_byte_identical(calibrated, tmp_path):
    assert main(["calibrate", "--seed", "3", "--noise", "off", "--out", str(tmp_path)]) == 0
    for name in ("calibration_log.csv", "calibration.json", "layout.json", "sim_config.json"):
        assert (tmp_path / name).read_bytes() == (calibrated / name).read_bytes()


def test_validate_outputs(calibrated, tmp_path, capsys):
    trials = tmp_path / "trials.json"
    trials.write_text(json.dumps({"version": 1, "trials": [
        {"mass_kg": 1.0, "center": [0.105, 0.07], "radius": 0.0178412411615277, "duration_s": 2.0}]}))
    rc = main(["validate", "--calibration", str(calibrated / "calibration.json"), "--trials", str(trials),
               "--seed", "3", "--noise", "off", "--out", str(tmp_path)])
    assert rc == 0
    summary = json.loads((tmp_path / "validation_summary.json").read_text())
    assert summary["trials"][0]["truth_N"] == pytest.approx(9.81)
    trace = (tmp_path / "force_trace.csv").read_text().splitlines()
    assert trace[0] == "t_s,fx_N,fy_N,fz_N,magnitude_N,extrapolated"
    assert "mean relative error" in capsys.readouterr().out


def test_zero_mass_trial_exits_2(calibrated, tmp_path):
    trials = tmp_path / "trials.json"
    trials.write_text(json.dumps({"version": 1, "trials": [{"mass_kg": 0.0, "center": [0.1, 0.07], "radius": 0.01}]}))
    assert main(["validate", "--calibration", str(calibrated / "calibration.json"), "--trials", str(trials),
                 "--out", str(tmp_path)]) == 2


def test_geometry_mismatch_exits_2(calibrated, tmp_path, capsys):
    layout = tmp_path / "other.json"
    save_layout(forearm_layout(side=0.031), layout)
    assert main(["validate", "--calibration", str(calibrated / "calibration.json"), "--layout", str(layout),
                 "--out", str(tmp_path)]) == 2
    assert "geometry" in capsys.readouterr().err


def test_report_on_empty_log(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["report", "--log", str(empty), "--out", str(tmp_path)]) == 3
    assert "line 1" in capsys.readouterr().err


def test_report_artifacts(calibrated, tmp_path, capsys):
    assert main(["report", "--log", str(calibrated / "calibration_log.csv"),
                 "--calibration", str(calibrated / "calibration.json"), "--taxel", "3",
                 "--out", str(tmp_path)]) == 0
    for name in ("average_curve.csv", "average_curve.svg", "taxel_fit_samples.csv", "taxel_fit_curve.csv",
                 "taxel_fit.svg"):
        assert (tmp_path / name).stat().st_size > 0
    assert "within 3 sigma" in capsys.readouterr().out


def test_report_needs_an_input(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("text, alpha", [("off", None), ("ema:0.2", 0.2), ("ema:1", 1.0)])
def test_filter_parsing(text, alpha):
    assert parse_filter(text) == alpha


@pytest.mark.parametrize("text", ["ema", "ema:", "ema:0", "ema:1.5", "kalman:0.2", "ema:x"])
def test_bad_filter_rejected(text):
    with pytest.raises(argparse.ArgumentTypeError):
        parse_filter(text)


def test_console_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "skincal.cli", "simulate", "--max-pressure", "20",
                           "--noise", "off", "--out", str(tmp_path)], capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    assert (tmp_path / "calibration_log.csv").is_file()

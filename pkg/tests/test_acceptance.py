"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s``; the lines are also
collected under the "acceptance criteria" heading of the terminal summary.
"""

import time

import numpy as np
import pytest

from skincal.calibration import CalibrationSample, detect_saturation, fit_taxel, select_increasing_segment
from skincal.cli import main
from skincal.forcefield import PressureField, integrate_force
from skincal.geometry import forearm_layout, mesh_from_points
from skincal.pipeline import calibrate, simulate_log
from skincal.protocols import (
    MsgKind,
    RegulatorMsg,
    adc_volts_to_pressure,
    amplifier_output,
    decode_module,
    decode_msg,
    divider_output,
    encode_module,
    encode_msg,
    pressure_to_dac_volts,
)
from skincal.sim import SimConfig, apply_noise_preset, vacuum_bag_config
from skincal.validation import default_trials, run_validation

N_CODEC = 10_000


# --- 1 -----------------------------------------------------------------------

def test_c1_fit_recovery(acceptance_line):
    rng = np.random.default_rng(20240101)
    worst_rms, worst_t = 0.0, 0.0
    for _ in range(300):
        n_levels = int(rng.integers(7, 120))
        levels = np.sort(rng.choice(256, size=n_levels, replace=False))
        if levels[-1] - levels[0] < 6:
            continue
        center, half = (levels[0] + levels[-1]) / 2, (levels[-1] - levels[0]) / 2
        coeffs = rng.uniform(-80.0, 80.0, 6)
        raw = np.repeat(levels, rng.integers(1, 6, n_levels))
        pressure = np.polynomial.polynomial.polyval((raw - center) / half, coeffs)
        t0 = time.perf_counter()
        cal = fit_taxel(pressure, raw)
        worst_t = max(worst_t, time.perf_counter() - t0)
        grid = np.linspace(levels[0], levels[-1], 1001)
        truth = np.polynomial.polynomial.polyval((grid - center) / half, coeffs)
        worst_rms = max(worst_rms, float(np.sqrt(np.mean((cal.evaluate(grid) - truth) ** 2))))
    ok = worst_rms <= 1e-6 and worst_t < 1.0
    acceptance_line("C1 fit recovery", ok, f"worst RMS {worst_rms:.2e} kPa (<= 1e-6), slowest fit {worst_t * 1e3:.2f} ms (< 1 s)")
    assert ok


# --- 2 -----------------------------------------------------------------------

def pipeline_error(noise: str, ema_alpha=None) -> tuple[float, float]:
    t0 = time.perf_counter()
    session = simulate_log(forearm_layout(), apply_noise_preset(SimConfig(seed=0), noise))
    calibrate(session)
    report = run_validation(session.mesh, session.cal_map, session.config, session.models,
                            default_trials(session.mesh), ema_alpha=ema_alpha)
    return report.mean_error, time.perf_counter() - t0


def test_c2_noise_free_reproduction(acceptance_line):
    err, elapsed = pipeline_error("off")
    ok = err <= 0.02 and elapsed < 60.0
    acceptance_line("C2 noise-free", ok, f"mean relative error {100 * err:.2f} % (<= 2 %), pipeline {elapsed:.1f} s (< 60 s)")
    assert ok


def test_c2_paper_noise_reproduction(acceptance_line):
    err, elapsed = pipeline_error("paper")
    ema_err, _ = pipeline_error("paper", ema_alpha=0.2)
    ok = err <= 0.15 and elapsed < 60.0
    acceptance_line("C2 paper noise", ok,
                    f"mean relative error {100 * err:.2f} % (<= 15 %), pipeline {elapsed:.1f} s (< 60 s); "
                    f"with --filter ema:0.2 {100 * ema_err:.2f} %")
    assert ok


# --- 3 -----------------------------------------------------------------------

def saturation_results(config):
    session = simulate_log(forearm_layout(), config)
    seg = select_increasing_segment(session.log)
    p = [s.pressure_kpa for s in seg]
    raw = np.array([s.raw for s in seg])
    return session.mesh.cut, [detect_saturation(p, raw[:, i]) for i in range(raw.shape[1])]


def test_c3_saturation(acceptance_line):
    details, ok = [], True
    for noise in ("off", "paper"):
        cut, device = saturation_results(apply_noise_preset(SimConfig(seed=0), noise))
        flagged = [i for i, (sat, _) in enumerate(device) if sat and not cut[i]]
        ok &= not flagged
        cut_v, bag = saturation_results(apply_noise_preset(vacuum_bag_config(), noise))
        knees = [k for (sat, k), c in zip(bag, cut_v) if not c and sat]
        all_sat = len(knees) == int((~cut_v).sum())
        in_band = all_sat and 45.0 <= min(knees) and max(knees) <= 65.0
        ok &= in_band
        details.append(f"{noise}: device non-cut saturated {len(flagged)}/{int((~cut).sum())}, "
                       f"vacuum knees {min(knees):.1f}-{max(knees):.1f} kPa over {len(knees)} non-cut taxels")
    acceptance_line("C3 saturation", ok, "; ".join(details))
    assert ok


# --- 4 -----------------------------------------------------------------------

def test_c4_force_integral(acceptance_line):
    g = np.linspace(0.0, 0.1, 11)
    uu, vv = np.meshgrid(g, g)
    square = mesh_from_points(np.column_stack([uu.ravel(), vv.ravel()]))
    force = integrate_force(PressureField(square, np.full(square.n_taxels, 10.0))).force
    const_err = float(np.max(np.abs(force - [0.0, 0.0, 100.0]))) / 100.0

    g = np.linspace(0.0, 1.0, 9)
    uu, vv = np.meshgrid(g, g)
    unit = mesh_from_points(np.column_stack([uu.ravel(), vv.ravel()]))
    alpha, beta = 4.0, -2.5
    fz = integrate_force(PressureField(unit, alpha + beta * unit.taxel_positions[:, 0])).force[2]
    n = 1000
    c = (np.arange(n) + 0.5) / n
    dense = 1000.0 * float(np.sum(alpha + beta * np.meshgrid(c, c)[0])) / (n * n)
    affine_err = abs(fz - dense) / abs(dense)
    ok = const_err <= 1e-10 and affine_err <= 1e-6
    acceptance_line("C4 force integral", ok, f"constant field rel err {const_err:.1e} (<= 1e-10), "
                                             f"affine vs 10^6-point grid rel err {affine_err:.1e} (<= 1e-6)")
    assert ok


# --- 5 -----------------------------------------------------------------------

def synthetic_ramp_vent(rng) -> np.ndarray:
    """Baseline, ramp with holds, vent with holds, rest; noise-free pressures."""
    parts = [np.zeros(rng.integers(1, 40))]
    p, peak = 0.0, rng.uniform(5.0, 300.0)
    while p < peak:
        if rng.random() < 0.15:
            parts.append(np.full(rng.integers(1, 30), p))
        step = rng.uniform(0.05, 5.0)
        n = int(rng.integers(1, 40))
        seg = np.minimum(p + step * np.arange(1, n + 1), peak)
        parts.append(seg)
        p = seg[-1]
    parts.append(np.full(rng.integers(0, 20), peak))
    while p > 0:
        if rng.random() < 0.15:
            parts.append(np.full(rng.integers(1, 30), p))
        n = int(rng.integers(1, 40))
        seg = np.maximum(p - rng.uniform(0.05, 8.0) * np.arange(1, n + 1), 0.0)
        parts.append(seg)
        p = seg[-1]
    parts.append(np.zeros(rng.integers(0, 50)))
    return np.concatenate(parts)


def test_c5_increasing_segment(acceptance_line):
    failures = []
    for seed in range(1000):
        p = synthetic_ramp_vent(np.random.default_rng(seed))
        samples = [CalibrationSample(0.1 * (i + 1), float(x), (0,)) for i, x in enumerate(p)]
        expected = samples[:int(np.argmax(p)) + 1]
        if select_increasing_segment(samples) != expected:
            failures.append(seed)
    ok = not failures
    acceptance_line("C5 increasing segment", ok, f"{1000 - len(failures)}/1000 seeds equal the argmax prefix"
                    + (f"; first failing seed {failures[0]}" if failures else ""))
    assert ok


# --- 6 -----------------------------------------------------------------------

def test_c6_codec_round_trips(acceptance_line):
    rng = np.random.default_rng(6)
    bad = {"frames": 0, "serial": 0, "voltage": 0}
    for _ in range(N_CODEC):
        mid, seq = int(rng.integers(0, 128)), int(rng.integers(0, 128))
        tax, tmp = rng.integers(0, 256, 10).tolist(), rng.integers(0, 256, 2).tolist()
        frames = encode_module(mid, tax, tmp, seq)
        if decode_module(frames) != (mid, tax, tmp, seq) or any(len(f.payload) != 8 for f in frames):
            bad["frames"] += 1
        msg = RegulatorMsg(MsgKind.SET if rng.random() < 0.5 else MsgKind.ACTUAL, int(rng.integers(0, 300_001)))
        if decode_msg(encode_msg(msg)) != msg:
            bad["serial"] += 1
        kpa = float(rng.uniform(0.0, 300.0))
        if abs(adc_volts_to_pressure(divider_output(amplifier_output(pressure_to_dac_volts(kpa)))) - kpa) > 1e-9:
            bad["voltage"] += 1
    ok = not any(bad.values())
    acceptance_line("C6 codec round trips", ok,
                    ", ".join(f"{k} {N_CODEC - v}/{N_CODEC}" for k, v in bad.items()))
    assert ok


# --- 7 -----------------------------------------------------------------------

def test_c7_hysteresis_avoidance(acceptance_line):
    session = simulate_log(forearm_layout(), apply_noise_preset(SimConfig(seed=0), "paper"))
    trials = default_trials(session.mesh)
    errors = {}
    for branch in ("increasing", "decreasing"):
        cal_map = calibrate(session, branch=branch)
        errors[branch] = run_validation(session.mesh, cal_map, session.config, session.models, trials).mean_error
    ok = errors["decreasing"] > errors["increasing"]
    acceptance_line("C7 hysteresis avoidance", ok, f"loading branch {100 * errors['increasing']:.2f} %, "
                                                   f"unloading branch {100 * errors['decreasing']:.2f} %")
    assert ok


# --- 8 -----------------------------------------------------------------------

def cli_run(out):
    common = ["--seed", "42", "--out", str(out)]
    assert main(["calibrate", *common]) == 0
    assert main(["validate", "--calibration", str(out / "calibration.json"), "--filter", "ema:0.2", *common]) == 0
    assert main(["report", "--log", str(out / "calibration_log.csv"), "--calibration", str(out / "calibration.json"),
                 "--trace", str(out / "force_trace.csv"), "--summary", str(out / "validation_summary.json"),
                 *common]) == 0
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_c8_determinism(acceptance_line, tmp_path):
    a = cli_run(tmp_path / "a")
    b = cli_run(tmp_path / "b")
    differing = [name for name in a if a[name] != b.get(name)]
    ok = set(a) == set(b) and not differing
    acceptance_line("C8 determinism", ok, f"{len(a) - len(differing)}/{len(a)} output files byte-identical")
    assert ok

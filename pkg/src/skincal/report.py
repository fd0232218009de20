"""Figure data for a calibration session: CSV tables plus SVG plots.

* average raw reading against chamber pressure over the run
* one taxel's fitted curve with its samples
* estimated against applied force during validation
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .calibration import CalibrationLog, CalibrationMap, select_increasing_segment
from .errors import ParseError


def average_curve(log: CalibrationLog) -> dict[str, np.ndarray]:
    """Mean raw count over all taxels at every logged sample."""
    return {
        "t_s": log.times(),
        "pressure_kpa": log.pressures(),
        "mean_raw": log.raw_matrix().mean(axis=1),
    }


def loading_curve(log: CalibrationLog) -> tuple[np.ndarray, np.ndarray]:
    """(pressure, mean raw) restricted to the increasing segment."""
    seg = select_increasing_segment(log)
    p = np.array([s.pressure_kpa for s in seg])
    raw = np.array([s.raw for s in seg], dtype=float)
    return p, raw.mean(axis=1)


def taxel_fit_curve(cal_map: CalibrationMap, log: CalibrationLog, taxel: int,
                    wrap_threshold_kpa: float = 0.0) -> dict[str, np.ndarray]:
    """Samples used to fit ``taxel`` and its fitted polynomial over the observed raw range."""
    if not 0 <= taxel < len(cal_map):
        raise IndexError(f"taxel {taxel} out of range [0, {len(cal_map)})")
    seg = select_increasing_segment(log)
    cal = cal_map.taxels[taxel]
    pressure = np.maximum(np.array([s.pressure_kpa for s in seg]) - wrap_threshold_kpa, 0.0)
    raw = np.array([s.raw[taxel] for s in seg], dtype=float)
    grid = np.arange(cal.raw_min, cal.raw_max + 1, dtype=float)
    return {"raw": raw, "pressure_kpa": pressure, "fit_raw": grid, "fit_kpa": cal.evaluate(grid)}


def band_coverage(cal, raw, pressure, *, pressure_sigma: float, count_sigma: float) -> float:
    """Fraction of samples within 3 sigma of the fitted curve.

    Sigma combines the pressure sensor noise with count noise and the
    quantization step, both mapped to kPa through the local slope of the fit.
    """
    raw = np.asarray(raw, dtype=float)
    pressure = np.asarray(pressure, dtype=float)
    deriv = np.polynomial.polynomial.polyder(cal.coeffs)
    slope = np.abs(np.polynomial.polynomial.polyval((raw - cal.center) / cal.halfrange, deriv)) / cal.halfrange
    sigma = np.sqrt(pressure_sigma ** 2 + (slope * count_sigma) ** 2 + slope ** 2 / 12.0)
    resid = np.abs(pressure - cal.evaluate(raw))
    return float(np.mean(resid <= 3.0 * sigma))


def force_comparison(trace: dict[str, np.ndarray], summary: dict) -> dict[str, np.ndarray]:
    """Applied force (from the trial schedule) next to the estimated magnitude."""
    t = trace["t_s"]
    truth = np.zeros_like(t)
    for trial in summary.get("trials", []):
        on = (t >= trial["t_start"] - 1e-9) & (t <= trial["t_end"] + 1e-9)
        truth[on] = trial["truth_N"]
    return {"t_s": t, "true_N": truth, "estimated_N": trace["magnitude_N"]}


def load_summary(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise ParseError("empty summary file", 1)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc


def write_columns(columns: dict[str, np.ndarray], path) -> None:
    names = list(columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*(columns[n] for n in names)):
            w.writerow([repr(float(v)) for v in row])


# --- plots -----------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed ids and no timestamp keep the SVG byte-stable between runs
    matplotlib.rcParams["svg.hashsalt"] = "skincal"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt

    plt.close(fig)


def plot_average_curve(curve, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(curve["t_s"], curve["pressure_kpa"], color="tab:red", lw=1)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("pressure [kPa]", color="tab:red")
    ax2 = ax.twinx()
    ax2.plot(curve["t_s"], curve["mean_raw"], color="tab:blue", lw=1)
    ax2.set_ylabel("average raw [counts]", color="tab:blue")
    fig.tight_layout()
    _save(fig, path)


def plot_taxel_fit(curve, taxel: int, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(curve["raw"], curve["pressure_kpa"], ".", ms=2, color="0.5", label="samples")
    ax.plot(curve["fit_raw"], curve["fit_kpa"], color="tab:blue", lw=1.5, label="fit")
    ax.set_xlabel("raw [counts]")
    ax.set_ylabel("pressure [kPa]")
    ax.set_title(f"taxel {taxel}")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_force_comparison(curve, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(curve["t_s"], curve["true_N"], color="tab:red", lw=1, label="applied")
    ax.plot(curve["t_s"], curve["estimated_N"], color="tab:blue", lw=0.8, label="estimated")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("force [N]")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)

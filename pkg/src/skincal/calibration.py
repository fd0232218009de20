"""Pressure-ramp acquisition and per-taxel fifth-order polynomial calibration.

Each taxel maps raw counts C to pressure with

    P(C) = a + b*C + c*C**2 + d*C**3 + e*C**4 + f*C**5

The fit is carried out in the scaled variable x = (C - center) / halfrange,
which keeps the least-squares problem well conditioned; ``expanded_coeffs``
recovers (a, ..., f) over raw counts when the plain form is needed.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Protocol, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    EmptyLog,
    InsufficientLevels,
    ParseError,
    PressureNotReached,
    SingularSystem,
    SourceStalled,
)

POLY_ORDER = 5
MIN_LEVELS = POLY_ORDER + 1
CALIBRATION_VERSION = 1
SMOOTH_WINDOW = 5
BACKSLIDE_KPA = 0.5
STALL_PERIODS = 10


@dataclass(frozen=True)
class CalibrationSample:
    t: float
    pressure_kpa: float
    raw: tuple[int, ...]

    def __post_init__(self):
        if not math.isfinite(self.pressure_kpa):
            raise ValueError(f"non-finite pressure at t={self.t}")
        if any(not 0 <= r <= 255 for r in self.raw):
            raise ValueError(f"raw reading outside [0, 255] at t={self.t}")


@dataclass
class CalibrationLog:
    samples: list[CalibrationSample]
    sample_rate: float
    config_snapshot: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = [s.t for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("calibration log timestamps must be strictly increasing")

    def __len__(self):
        return len(self.samples)

    @property
    def n_taxels(self) -> int:
        return len(self.samples[0].raw) if self.samples else 0

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def pressures(self) -> np.ndarray:
        return np.array([s.pressure_kpa for s in self.samples])

    def raw_matrix(self) -> np.ndarray:
        return np.array([s.raw for s in self.samples], dtype=np.int64).reshape(len(self.samples), -1)


class SampleSource(Protocol):
    def command(self, kpa: float) -> None: ...

    def read(self) -> CalibrationSample | None: ...


# --- acquisition -----------------------------------------------------------

def run_calibration(config, source: SampleSource) -> CalibrationLog:
    """Drive one calibration session: baseline, ramp to ``max_pressure``, vent.

    ``config`` needs ``sample_rate``, ``ramp_rate``, ``max_pressure``,
    ``baseline_s``, ``vent_rate``, ``vent_hold_s``, ``attain_tol_kpa`` and
    ``timeout_s`` (None picks ramp time + 60 s).
    """
    dt = 1.0 / config.sample_rate
    samples: list[CalibrationSample] = []

    def pull() -> CalibrationSample:
        s = source.read()
        if s is None or (samples and s.t - samples[-1].t > STALL_PERIODS * dt + 1e-9):
            raise SourceStalled(f"no sample within {STALL_PERIODS} sample periods after t={samples[-1].t if samples else 0.0}")
        samples.append(s)
        return s

    for _ in range(max(1, round(config.baseline_s * config.sample_rate))):
        source.command(0.0)
        pull()

    target = config.max_pressure
    timeout = config.timeout_s if config.timeout_s is not None else target / config.ramp_rate + 60.0
    t0 = samples[-1].t
    commanded = 0.0
    while True:
        last = samples[-1]
        if commanded >= target and last.pressure_kpa >= target - config.attain_tol_kpa:
            break
        if last.t - t0 > timeout:
            raise PressureNotReached(
                f"pressure {last.pressure_kpa:.2f} kPa after {last.t - t0:.1f} s, target {target} kPa"
            )
        commanded = min(target, config.ramp_rate * (last.t + dt - t0))
        source.command(commanded)
        pull()

    if commanded > 0.0:
        vent_rate = config.vent_rate or config.ramp_rate
        while commanded > 0.0:
            commanded = max(0.0, commanded - vent_rate * dt)
            source.command(commanded)
            pull()
        for _ in range(round(config.vent_hold_s * config.sample_rate)):
            source.command(0.0)
            pull()

    snapshot = config.to_dict() if hasattr(config, "to_dict") else {}
    return CalibrationLog(samples, config.sample_rate, snapshot)


def moving_median(values, window: int = SMOOTH_WINDOW) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    half = window // 2
    padded = np.pad(x, half, mode="edge")
    return np.median(np.lib.stride_tricks.sliding_window_view(padded, window), axis=1)


def increasing_segment_indices(pressures) -> np.ndarray:
    """Indices kept by :func:`select_increasing_segment`."""
    p = np.asarray(pressures, dtype=float)
    if p.size == 0:
        raise EmptyLog("calibration log is empty")
    smooth = moving_median(p)
    peak_smooth = int(np.argmax(smooth))
    # the median lags the raw peak by at most half a window
    lo = max(0, peak_smooth - SMOOTH_WINDOW // 2)
    hi = min(p.size, peak_smooth + SMOOTH_WINDOW // 2 + 1)
    peak = lo + int(np.argmax(p[lo:hi]))
    running = np.maximum.accumulate(smooth[:peak + 1])
    keep = smooth[:peak + 1] > running - BACKSLIDE_KPA
    keep[peak] = True
    return np.flatnonzero(keep)


def select_increasing_segment(log) -> list[CalibrationSample]:
    samples = log.samples if isinstance(log, CalibrationLog) else list(log)
    if not samples:
        raise EmptyLog("calibration log is empty")
    idx = increasing_segment_indices([s.pressure_kpa for s in samples])
    return [samples[i] for i in idx]


def decreasing_segment(log) -> list[CalibrationSample]:
    """Samples from the pressure peak to the end of the log (the venting branch)."""
    samples = log.samples if isinstance(log, CalibrationLog) else list(log)
    if not samples:
        raise EmptyLog("calibration log is empty")
    peak = int(increasing_segment_indices([s.pressure_kpa for s in samples])[-1])
    return samples[peak:]


# --- fitting ---------------------------------------------------------------

class PressureEstimate(NamedTuple):
    kpa: float
    extrapolated: bool


@dataclass(frozen=True)
class TaxelCalibration:
    coeffs: tuple[float, ...]
    center: float
    halfrange: float
    raw_min: int
    raw_max: int
    rmse_kpa: float
    saturated: bool = False
    taxel_id: int = 0

    def evaluate(self, raw):
        """Polynomial value at ``raw`` counts, without clamping."""
        x = (np.asarray(raw, dtype=float) - self.center) / self.halfrange
        return np.polynomial.polynomial.polyval(x, self.coeffs)

    def expanded_coeffs(self) -> tuple[float, ...]:
        """Coefficients (a, b, c, d, e, f) of the same polynomial over raw counts."""
        out = [0.0] * (POLY_ORDER + 1)
        for k, ck in enumerate(self.coeffs):
            scale = ck / self.halfrange ** k
            for j in range(k + 1):
                out[j] += scale * math.comb(k, j) * (-self.center) ** (k - j)
        return tuple(out)

    def with_id(self, taxel_id: int) -> "TaxelCalibration":
        return TaxelCalibration(self.coeffs, self.center, self.halfrange, self.raw_min,
                                self.raw_max, self.rmse_kpa, self.saturated, taxel_id)


def fit_taxel(pressures, raw, *, saturated: bool = False, taxel_id: int = 0) -> TaxelCalibration:
    """Least-squares fifth-order fit of pressure against raw counts.

    The Vandermonde matrix in the scaled variable is factored with QR and the
    triangular system solved directly, avoiding the normal equations.
    """
    p = np.asarray(pressures, dtype=float)
    c = np.asarray(raw, dtype=float)
    if p.shape != c.shape or p.ndim != 1:
        raise ValueError("pressures and raw counts must be 1-D arrays of equal length")
    n_levels = np.unique(c).size
    if n_levels < MIN_LEVELS:
        raise InsufficientLevels(
            f"taxel {taxel_id}: {n_levels} distinct raw levels, need {MIN_LEVELS}", [taxel_id]
        )
    lo, hi = float(c.min()), float(c.max())
    center, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    x = (c - center) / half
    vander = np.polynomial.polynomial.polyvander(x, POLY_ORDER)
    q, r = np.linalg.qr(vander)
    diag = np.abs(np.diag(r))
    if diag.min() <= np.finfo(float).eps * vander.shape[0] * diag.max():
        raise SingularSystem(f"taxel {taxel_id}: design matrix is rank deficient")
    coeffs = solve_triangular(r, q.T @ p)
    resid = vander @ coeffs - p
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    return TaxelCalibration(tuple(float(v) for v in coeffs), center, half, int(round(lo)),
                            int(round(hi)), rmse, bool(saturated), taxel_id)


def estimate_pressure(cal: TaxelCalibration, raw, max_kpa: float = math.inf) -> PressureEstimate:
    """Pressure for one reading; inputs outside the calibrated raw range are clamped and flagged."""
    clamped = min(max(float(raw), cal.raw_min), cal.raw_max)
    value = float(cal.evaluate(clamped))
    return PressureEstimate(min(max(value, 0.0), max_kpa), clamped != float(raw))


def level_means(pressures, raw) -> tuple[np.ndarray, np.ndarray]:
    """Collapse samples to one point per distinct raw level (mean pressure)."""
    levels, inverse = np.unique(np.asarray(raw), return_inverse=True)
    p = np.asarray(pressures, dtype=float)
    means = np.bincount(inverse, weights=p) / np.bincount(inverse)
    return means, levels.astype(float)


def detect_saturation(pressures, raw, *, window_frac: float = 0.2, min_rise_kpa: float = 10.0,
                      flat_counts: float = 1.0, knee_counts: float = 2.0,
                      smooth: int = 11) -> tuple[bool, float | None]:
    """Flag a response that stops changing near the top of the ramp.

    The change over the final ``window_frac`` of the pressure span is measured
    from a straight-line fit of raw against pressure, which is robust to
    count noise. The knee is the earliest (median-smoothed) pressure after
    which the smoothed reading moves by less than ``knee_counts``.
    """
    p = np.asarray(pressures, dtype=float)
    c = np.asarray(raw, dtype=float)
    if p.size < 2:
        return False, None
    p_smooth = moving_median(p)
    top = p_smooth.max()
    span = top - p_smooth.min()
    window = p_smooth >= top - window_frac * span
    rise = float(np.ptp(p_smooth[window])) if window.sum() > 1 else 0.0
    if rise <= min_rise_kpa:
        return False, None
    pw, cw = p_smooth[window], c[window]
    slope = np.polyfit(pw, cw, 1)[0] if np.ptp(cw) > 0 else 0.0
    if abs(slope) * rise >= flat_counts:
        return False, None
    k = min(smooth, c.size)
    c_smooth = np.convolve(np.pad(c, (k // 2, k - 1 - k // 2), mode="edge"), np.ones(k) / k, mode="valid")
    tail_max = np.maximum.accumulate(c_smooth[::-1])[::-1]
    tail_min = np.minimum.accumulate(c_smooth[::-1])[::-1]
    first = int(np.flatnonzero(tail_max - tail_min < knee_counts)[0])
    return True, float(p_smooth[first])


@dataclass
class CalibrationMap:
    taxels: list[TaxelCalibration]
    max_calibrated_pressure: float
    geometry_hash: str
    created_at: str | None = None

    def __len__(self):
        return len(self.taxels)

    def _columns(self):
        cols = self.__dict__.get("_cols")
        if cols is None or cols[0] is not self.taxels or len(cols[1]) != len(self.taxels):
            arr = (
                np.array([t.coeffs for t in self.taxels]).reshape(-1, POLY_ORDER + 1),
                np.array([t.center for t in self.taxels]),
                np.array([t.halfrange for t in self.taxels]),
                np.array([t.raw_min for t in self.taxels], dtype=float),
                np.array([t.raw_max for t in self.taxels], dtype=float),
            )
            cols = (self.taxels, *arr)
            self.__dict__["_cols"] = cols
        return cols[1:]

    def estimate_frame(self, raw_frame) -> tuple[np.ndarray, np.ndarray]:
        """Per-taxel pressures and extrapolation flags for one frame (float counts allowed).

        Same rule as :func:`estimate_pressure`, applied to every taxel at once.
        """
        raw = np.asarray(raw_frame, dtype=float)
        if raw.shape != (len(self.taxels),):
            raise ValueError(f"frame has {raw.size} taxels, calibration has {len(self.taxels)}")
        coeffs, center, half, lo, hi = self._columns()
        clamped = np.clip(raw, lo, hi)
        x = (clamped - center) / half
        value = coeffs[:, POLY_ORDER].copy()
        for k in range(POLY_ORDER - 1, -1, -1):
            value = value * x + coeffs[:, k]
        return np.clip(value, 0.0, self.max_calibrated_pressure), clamped != raw

    def to_dict(self) -> dict:
        return {
            "version": CALIBRATION_VERSION,
            "max_calibrated_pressure": self.max_calibrated_pressure,
            "geometry_hash": self.geometry_hash,
            "taxels": [
                {
                    "id": t.taxel_id,
                    "coeffs": list(t.coeffs),
                    "center": t.center,
                    "halfrange": t.halfrange,
                    "raw_min": t.raw_min,
                    "raw_max": t.raw_max,
                    "rmse_kpa": t.rmse_kpa,
                    "saturated": t.saturated,
                }
                for t in self.taxels
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CalibrationMap":
        if doc.get("version") != CALIBRATION_VERSION:
            raise ParseError(f"unsupported calibration version {doc.get('version')!r}")
        try:
            taxels = [
                TaxelCalibration(tuple(float(v) for v in t["coeffs"]), float(t["center"]),
                                 float(t["halfrange"]), int(t["raw_min"]), int(t["raw_max"]),
                                 float(t["rmse_kpa"]), bool(t["saturated"]), int(t["id"]))
                for t in doc["taxels"]
            ]
            if any(len(t.coeffs) != POLY_ORDER + 1 for t in taxels):
                raise ValueError("each taxel needs 6 coefficients")
            return cls(taxels, float(doc["max_calibrated_pressure"]), str(doc["geometry_hash"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad calibration document: {exc}") from exc


def fit_map(samples: Sequence[CalibrationSample], geometry_hash: str, *, wrap_threshold_kpa: float = 0.0,
            executor: Executor | None = None) -> CalibrationMap:
    """Fit every taxel from the increasing segment of a calibration run.

    The bladder absorbs the first ``wrap_threshold_kpa`` of chamber pressure,
    so the fitting target is the pressure reaching the skin,
    max(0, chamber - wrap). Samples are collapsed to one mean pressure per raw
    level before fitting; the recorded RMSE is taken over all samples.
    """
    if not samples:
        raise EmptyLog("no samples to fit")
    pressure = np.array([s.pressure_kpa for s in samples])
    raw = np.array([s.raw for s in samples], dtype=np.int64)
    target = np.maximum(pressure - wrap_threshold_kpa, 0.0)

    def one(i: int) -> TaxelCalibration | InsufficientLevels:
        saturated, _ = detect_saturation(pressure, raw[:, i])
        means, levels = level_means(target, raw[:, i])
        try:
            cal = fit_taxel(means, levels, saturated=saturated, taxel_id=i)
        except InsufficientLevels as exc:
            return exc
        # report the misfit against every logged sample, not just the level means
        rmse = float(np.sqrt(np.mean((cal.evaluate(raw[:, i]) - target) ** 2)))
        return dataclasses.replace(cal, rmse_kpa=rmse)

    ids = range(raw.shape[1])
    results = list(executor.map(one, ids)) if executor is not None else [one(i) for i in ids]
    failed = [r.taxels[0] for r in results if isinstance(r, InsufficientLevels)]
    if failed:
        raise InsufficientLevels(f"{len(failed)} taxels have fewer than {MIN_LEVELS} raw levels: {failed}", failed)
    return CalibrationMap(results, float(target.max()), geometry_hash)


def save_calibration(cal_map: CalibrationMap, path) -> None:
    Path(path).write_text(json.dumps(cal_map.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_calibration(path) -> CalibrationMap:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
    return CalibrationMap.from_dict(doc)


# --- log files -------------------------------------------------------------

def format_log(log: CalibrationLog) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t_s", "pressure_kpa"] + [f"taxel_{i}" for i in range(log.n_taxels)])
    for s in log.samples:
        writer.writerow([repr(s.t), repr(s.pressure_kpa), *s.raw])
    return buf.getvalue()


def save_log(log: CalibrationLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_log(log))


def parse_log(text: str, sample_rate: float | None = None) -> CalibrationLog:
    lines = text.split("\n")
    if not lines or not lines[0].strip():
        raise ParseError("missing header", 1)
    header = lines[0].split(",")
    n = len(header) - 2
    if header[:2] != ["t_s", "pressure_kpa"] or header[2:] != [f"taxel_{i}" for i in range(n)]:
        raise ParseError("expected header t_s,pressure_kpa,taxel_0,...", 1)
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != n + 2:
            raise ParseError(f"expected {n + 2} fields, got {len(fields)}", lineno)
        try:
            samples.append(CalibrationSample(float(fields[0]), float(fields[1]), tuple(int(v) for v in fields[2:])))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
    if sample_rate is None:
        ts = [s.t for s in samples]
        sample_rate = (len(ts) - 1) / (ts[-1] - ts[0]) if len(ts) > 1 and ts[-1] > ts[0] else 1.0
    try:
        return CalibrationLog(samples, sample_rate)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def load_log(path, sample_rate: float | None = None) -> CalibrationLog:
    return parse_log(Path(path).read_text(encoding="utf-8"), sample_rate)


class EmaFilter:
    """Exponential moving average over successive per-taxel estimate vectors."""

    def __init__(self, alpha: float = 0.2):
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"EMA alpha must be in (0, 1], got {alpha}")
        self.alpha = alpha
        self._state = None

    def __call__(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        self._state = v.copy() if self._state is None else self._state + self.alpha * (v - self._state)
        return self._state.copy()

    def reset(self) -> None:
        self._state = None

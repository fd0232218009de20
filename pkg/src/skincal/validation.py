"""Masses-on-skin validation: load known weights, compare estimated and true force."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .calibration import CalibrationMap, EmaFilter
from .errors import ParseError, ZeroTruth
from .forcefield import TARE_FRAMES, ForceEstimate, integrate_force, reconstruct_field, relative_error, tare_baseline
from .geometry import SkinMesh, disk_coverage, parameter_vertex_areas
from .sim import ContactRig, SimConfig

STANDARD_GRAVITY = 9.81
PUCK_AREA_1KG = 1e-3
TRIALS_VERSION = 1


@dataclass(frozen=True)
class ValidationTrial:
    mass_kg: float
    center: tuple[float, float]
    radius: float
    duration_s: float = 5.0

    @property
    def truth(self) -> float:
        return self.mass_kg * STANDARD_GRAVITY

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2


@dataclass
class TrialResult:
    trial: ValidationTrial
    estimated_n: float
    error: float
    t_start: float
    t_end: float
    extrapolated: bool


@dataclass
class ValidationReport:
    results: list[TrialResult]
    trace: list[tuple[float, ForceEstimate]] = field(repr=False, default_factory=list)

    @property
    def mean_error(self) -> float:
        return float(np.mean([r.error for r in self.results]))

    def summary(self) -> dict:
        return {
            "version": TRIALS_VERSION,
            "mean_relative_error": self.mean_error,
            "trials": [
                {
                    "mass_kg": r.trial.mass_kg,
                    "center": list(r.trial.center),
                    "radius": r.trial.radius,
                    "truth_N": r.trial.truth,
                    "estimated_N": r.estimated_n,
                    "relative_error": r.error,
                    "t_start": r.t_start,
                    "t_end": r.t_end,
                    "extrapolated": r.extrapolated,
                }
                for r in self.results
            ],
        }


def hull_clearance(mesh: SkinMesh, point) -> float:
    """Distance from ``point`` to the boundary of the taxel hull (negative outside)."""
    eq = ConvexHull(mesh.taxel_positions).equations       # a*u + b*v + c <= 0 inside, (a, b) unit
    return float(-(eq[:, :2] @ np.asarray(point, dtype=float) + eq[:, 2]).max())


def default_trials(mesh: SkinMesh, masses=None) -> list[ValidationTrial]:
    """Ten weights of 0.2..2.0 kg spread along the middle of the patch.

    Weights are taken as geometrically similar pucks: the 1 kg puck covers
    0.001 m^2 and the contact area scales with mass**(2/3). Centers are placed
    on the patch mid-line, one taxel pitch inside the hull for the largest puck.
    """
    masses = [round(0.2 * k, 10) for k in range(1, 11)] if masses is None else list(masses)
    radii = [math.sqrt(PUCK_AREA_1KG * m ** (2.0 / 3.0) / math.pi) for m in masses]
    uv = mesh.taxel_positions
    v_mid = 0.5 * (uv[:, 1].min() + uv[:, 1].max())
    margin = max(radii) + 0.25 * math.sqrt(mesh.vertex_areas().mean() * 4.0)
    us = np.linspace(uv[:, 0].min(), uv[:, 0].max(), 401)
    ok = [u for u in us if hull_clearance(mesh, (u, v_mid)) >= margin]
    if not ok:
        raise ValueError("patch too small for the default validation weights")
    centers = np.linspace(ok[0], ok[-1], 5)
    return [ValidationTrial(m, (float(centers[k % 5]), float(v_mid)), r) for k, (m, r) in enumerate(zip(masses, radii))]


def footprint_pressures(mesh: SkinMesh, trial: ValidationTrial) -> np.ndarray:
    """Load seen by each taxel: the mass's uniform pressure times the covered share of its cell."""
    pressure_kpa = trial.truth / trial.area / 1000.0
    cover = disk_coverage(mesh, trial.center, trial.radius)
    return pressure_kpa * cover / parameter_vertex_areas(mesh)


def run_validation(mesh: SkinMesh, cal_map: CalibrationMap, config: SimConfig, models,
                   trials, *, ema_alpha: float | None = None, rest_s: float = 30.0) -> ValidationReport:
    trials = list(trials)
    for t in trials:
        if t.mass_kg <= 0:
            raise ZeroTruth(f"trial mass must be positive, got {t.mass_kg} kg")
    rig = ContactRig(config, models)
    dt = config.dt
    zero = np.zeros(mesh.n_taxels)
    step = 0
    tare = []
    for _ in range(TARE_FRAMES):
        step += 1
        tare.append(rig.frame(zero))
    baseline = tare_baseline(cal_map, tare)
    smoother = EmaFilter(ema_alpha) if ema_alpha else None
    trace: list[tuple[float, ForceEstimate]] = []

    def observe(load) -> ForceEstimate:
        nonlocal step
        step += 1
        counts = rig.frame(load)
        est = integrate_force(reconstruct_field(mesh, cal_map, counts, baseline, smoother))
        trace.append((step / config.sample_rate, est))
        return est

    results = []
    n_rest = round(rest_s * config.sample_rate)
    for trial in trials:
        load = footprint_pressures(mesh, trial)
        t_start = (step + 1) / config.sample_rate
        loaded = [observe(load) for _ in range(max(1, round(trial.duration_s * config.sample_rate)))]
        t_end = step / config.sample_rate
        for _ in range(n_rest):
            observe(zero)
        estimated = float(np.mean([e.magnitude for e in loaded]))
        results.append(TrialResult(trial, estimated, relative_error(estimated, trial.truth), t_start, t_end,
                                   any(e.extrapolated for e in loaded)))
    return ValidationReport(results, trace)


def trials_to_dict(trials) -> dict:
    return {
        "version": TRIALS_VERSION,
        "trials": [
            {"mass_kg": t.mass_kg, "center": list(t.center), "radius": t.radius, "duration_s": t.duration_s}
            for t in trials
        ],
    }


def load_trials(path) -> list[ValidationTrial]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
    if doc.get("version") != TRIALS_VERSION:
        raise ParseError(f"unsupported trials version {doc.get('version')!r}")
    try:
        return [
            ValidationTrial(float(t["mass_kg"]), tuple(t["center"]), float(t["radius"]), float(t.get("duration_s", 5.0)))
            for t in doc["trials"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad trials document: {exc}") from exc

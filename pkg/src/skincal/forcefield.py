"""Pressure field reconstruction and contact-force integration over a skin mesh."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import CalibrationMap
from .errors import GeometryMismatch, ParseError, ZeroTruth
from .geometry import SkinMesh

KPA_M2_TO_N = 1000.0
TARE_FRAMES = 10
MIN_FORCE_N = 1e-9
TRACE_HEADER = ["t_s", "fx_N", "fy_N", "fz_N", "magnitude_N", "extrapolated"]


@dataclass(frozen=True, eq=False)
class PressureField:
    mesh: SkinMesh
    pressures: np.ndarray
    extrapolated: np.ndarray = None

    def __post_init__(self):
        p = np.asarray(self.pressures, dtype=float)
        if p.shape != (self.mesh.n_taxels,):
            raise ValueError(f"field needs {self.mesh.n_taxels} pressures, got shape {p.shape}")
        object.__setattr__(self, "pressures", p)
        flags = np.zeros(p.shape, dtype=bool) if self.extrapolated is None else np.asarray(self.extrapolated, dtype=bool)
        object.__setattr__(self, "extrapolated", flags)


@dataclass(frozen=True)
class ForceEstimate:
    force: np.ndarray
    magnitude: float
    contact_centroid: tuple[float, float] | None
    flags: frozenset = field(default_factory=frozenset)

    @property
    def extrapolated(self) -> bool:
        return "extrapolated" in self.flags


def tare_baseline(cal_map: CalibrationMap, zero_load_frames) -> np.ndarray:
    """Per-taxel pressure offset from the mean of the first zero-load frames."""
    frames = np.asarray(zero_load_frames, dtype=float)[:TARE_FRAMES]
    if frames.ndim != 2 or len(frames) == 0:
        raise ValueError("tare needs at least one zero-load frame")
    baseline, _ = cal_map.estimate_frame(frames.mean(axis=0))
    return baseline


def reconstruct_field(mesh: SkinMesh, cal_map: CalibrationMap, raw_frame, baseline=None,
                      smoother=None) -> PressureField:
    """Calibrated, tared and non-negative per-taxel pressures for one raw frame.

    ``smoother`` (e.g. an :class:`~skincal.calibration.EmaFilter`) is applied to
    the per-taxel estimates before the tare is removed.
    """
    if cal_map.geometry_hash != mesh.geometry_hash():
        raise GeometryMismatch("calibration map was built for a different skin geometry")
    raw = np.asarray(raw_frame, dtype=float)
    if raw.shape != (mesh.n_taxels,):
        raise ValueError(f"frame has {raw.size} taxels, mesh has {mesh.n_taxels}")
    est, flags = cal_map.estimate_frame(raw)
    if smoother is not None:
        est = smoother(est)
    if baseline is not None:
        est = est - np.asarray(baseline, dtype=float)
    return PressureField(mesh, np.maximum(est, 0.0), flags)


def integrate_force(pfield: PressureField) -> ForceEstimate:
    """Integrate pressure times surface normal over every facet.

    Each facet uses the three edge midpoints with equal weights, which is
    exact for quadratics and therefore for the piecewise-linear field.
    """
    mesh = pfield.mesh
    p = pfield.pressures[mesh.facets]                      # (M, 3)
    mids = 0.5 * (p + np.roll(p, -1, axis=1))              # ab, bc, ca
    mean_p = mids.mean(axis=1)
    force = KPA_M2_TO_N * np.sum((mesh.areas * mean_p)[:, None] * mesh.normals, axis=0)
    magnitude = float(np.linalg.norm(force))
    flags = set()
    if pfield.extrapolated.any():
        flags.add("extrapolated")
    centroid = None
    uv = mesh.taxel_positions[mesh.facets]                 # (M, 3, 2)
    mid_uv = 0.5 * (uv + np.roll(uv, -1, axis=1))
    weights = (mesh.areas / 3.0)[:, None] * mids
    total = weights.sum()
    if magnitude < MIN_FORCE_N or total <= 0.0:
        flags.add("centroid_undefined")
    else:
        centroid = tuple(float(v) for v in (weights[..., None] * mid_uv).sum(axis=(0, 1)) / total)
    return ForceEstimate(force, magnitude, centroid, frozenset(flags))


def relative_error(estimated: float, truth: float) -> float:
    if truth <= 0:
        raise ZeroTruth(f"reference force must be positive, got {truth}")
    return abs(estimated - truth) / truth


def write_trace(rows, path) -> None:
    """Rows of (t_s, ForceEstimate) as the streaming force trace CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t, est in rows:
            fx, fy, fz = (repr(float(v)) for v in est.force)
            w.writerow([repr(float(t)), fx, fy, fz, repr(est.magnitude), int(est.extrapolated)])


def read_trace(path) -> dict[str, np.ndarray]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if not lines[0].strip():
        raise ParseError("missing header", 1)
    if lines[0].split(",") != TRACE_HEADER:
        raise ParseError(f"expected header {','.join(TRACE_HEADER)}", 1)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(TRACE_HEADER):
            raise ParseError(f"expected {len(TRACE_HEADER)} fields, got {len(parts)}", lineno)
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
    data = np.array(rows, dtype=float).reshape(-1, len(TRACE_HEADER))
    return {name: data[:, k] for k, name in enumerate(TRACE_HEADER)}

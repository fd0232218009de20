"""Pneumatic calibration of capacitive robot skin.

Simulated plenum chamber, pressure-ramp acquisition, per-taxel fifth-order
polynomial fitting and force reconstruction over a triangulated skin patch.
"""

from .calibration import (
    CalibrationLog,
    CalibrationMap,
    CalibrationSample,
    EmaFilter,
    TaxelCalibration,
    detect_saturation,
    estimate_pressure,
    fit_map,
    fit_taxel,
    run_calibration,
    select_increasing_segment,
)
from .errors import SkincalError
from .forcefield import ForceEstimate, PressureField, integrate_force, reconstruct_field, relative_error
from .geometry import SkinMesh, TaxelLayout, TriangleModule, build_mesh, forearm_layout, interpolate_pressure
from .pipeline import Session, calibrate, simulate_log
from .sim import SimConfig, TaxelResponseModel, apply_noise_preset, vacuum_bag_config

__version__ = "0.1.0"

__all__ = [
    "Session",
    "calibrate",
    "simulate_log",
    "CalibrationLog",
    "CalibrationMap",
    "CalibrationSample",
    "EmaFilter",
    "ForceEstimate",
    "PressureField",
    "SimConfig",
    "SkinMesh",
    "SkincalError",
    "TaxelCalibration",
    "TaxelLayout",
    "TaxelResponseModel",
    "TriangleModule",
    "apply_noise_preset",
    "build_mesh",
    "detect_saturation",
    "estimate_pressure",
    "fit_map",
    "fit_taxel",
    "forearm_layout",
    "integrate_force",
    "interpolate_pressure",
    "reconstruct_field",
    "relative_error",
    "run_calibration",
    "select_increasing_segment",
    "vacuum_bag_config",
]

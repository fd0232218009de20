"""End-to-end helpers: simulated calibration session and fitted map."""

from __future__ import annotations

from dataclasses import dataclass

from .calibration import (
    CalibrationLog,
    CalibrationMap,
    decreasing_segment,
    fit_map,
    run_calibration,
    select_increasing_segment,
)
from .geometry import SkinMesh, TaxelLayout, build_mesh
from .sim import PlenumRig, SimConfig, make_models


@dataclass
class Session:
    layout: TaxelLayout
    mesh: SkinMesh
    config: SimConfig
    models: list
    log: CalibrationLog
    cal_map: CalibrationMap | None = None


def simulate_log(layout: TaxelLayout, config: SimConfig, *, wire: bool = False) -> Session:
    mesh = build_mesh(layout)
    models = make_models(config, layout.cut_flags())
    rig = PlenumRig(config, models, module_ids=layout.module_ids(), wire=wire)
    log = run_calibration(config, rig)
    return Session(layout, mesh, config, models, log)


def calibrate(session: Session, *, branch: str = "increasing", executor=None) -> CalibrationMap:
    """Fit the session's log on the loading (default) or unloading branch."""
    if branch == "increasing":
        segment = select_increasing_segment(session.log)
    elif branch == "decreasing":
        segment = decreasing_segment(session.log)
    else:
        raise ValueError(f"unknown branch {branch!r}")
    session.cal_map = fit_map(segment, session.mesh.geometry_hash(),
                              wrap_threshold_kpa=session.config.wrap_threshold_kpa, executor=executor)
    return session.cal_map

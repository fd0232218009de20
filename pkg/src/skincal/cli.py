"""Command-line front end: ``skincal simulate | calibrate | validate | report``.

Exit codes: 0 success, 2 domain error (too few raw levels, zero-force
trial, geometry mismatch, invalid settings), 3 input/output failure
(unreadable or malformed files).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import report
from .calibration import (
    InsufficientLevels,
    fit_map,
    load_calibration,
    load_log,
    save_calibration,
    save_log,
    select_increasing_segment,
    decreasing_segment,
)
from .errors import ParseError, SkincalError
from .forcefield import read_trace, write_trace
from .geometry import build_mesh, forearm_layout, load_layout, save_layout
from .pipeline import simulate_log
from .sim import DEVICE_MAX_KPA, SimConfig, apply_noise_preset, load_sim_config, make_models, save_sim_config
from .validation import default_trials, load_trials, run_validation, trials_to_dict

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 2, 3

LAYOUT_FILE = "layout.json"
SIM_CONFIG_FILE = "sim_config.json"
LOG_FILE = "calibration_log.csv"
CALIBRATION_FILE = "calibration.json"
TRIALS_FILE = "trials.json"
TRACE_FILE = "force_trace.csv"
SUMMARY_FILE = "validation_summary.json"


class UsageError(SkincalError):
    pass


@dataclass
class RunConfig:
    out: Path
    layout: Path | None = None
    sim_config: Path | None = None
    seed: int | None = None
    ramp_rate: float | None = None
    max_pressure: float | None = None
    noise: str | None = None
    ema_alpha: float | None = None
    inputs: dict = field(default_factory=dict)

    def check(self) -> None:
        """Fail before any work starts if a setting or input path is unusable."""
        if self.max_pressure is not None and not 0.0 < self.max_pressure <= DEVICE_MAX_KPA:
            raise UsageError(f"max pressure must be in (0, {DEVICE_MAX_KPA:g}] kPa, got {self.max_pressure}")
        if self.ramp_rate is not None and self.ramp_rate <= 0:
            raise UsageError(f"ramp rate must be positive, got {self.ramp_rate}")
        if self.seed is not None and not 0 <= self.seed < 2 ** 64:
            raise UsageError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        for name, path in [("layout", self.layout), ("config", self.sim_config), *self.inputs.items()]:
            if path is not None and not Path(path).is_file():
                raise FileNotFoundError(f"{name} file not found: {path}")
        self.out.mkdir(parents=True, exist_ok=True)

    def load_layout(self):
        return load_layout(self.layout) if self.layout else forearm_layout()

    def sim(self) -> SimConfig:
        cfg = load_sim_config(self.sim_config) if self.sim_config else SimConfig()
        changes = {}
        if self.seed is not None:
            changes["seed"] = self.seed
        if self.ramp_rate is not None:
            changes["ramp_rate"] = self.ramp_rate
        if self.max_pressure is not None:
            changes["max_pressure"] = self.max_pressure
        if changes:
            cfg = cfg.replace(**changes)
        if self.noise is not None:
            cfg = apply_noise_preset(cfg, self.noise)
        return cfg


def parse_filter(text: str) -> float | None:
    if text == "off":
        return None
    kind, _, value = text.partition(":")
    if kind != "ema" or not value:
        raise argparse.ArgumentTypeError(f"filter must be 'off' or 'ema:<alpha>', got {text!r}")
    try:
        alpha = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad EMA alpha {value!r}") from None
    if not 0.0 < alpha <= 1.0:
        raise argparse.ArgumentTypeError(f"EMA alpha must be in (0, 1], got {alpha}")
    return alpha


def _run_config(args, **inputs) -> RunConfig:
    rc = RunConfig(
        out=Path(args.out),
        layout=Path(args.layout) if args.layout else None,
        sim_config=Path(args.config) if args.config else None,
        seed=args.seed,
        ramp_rate=getattr(args, "ramp_rate", None),
        max_pressure=getattr(args, "max_pressure", None),
        noise=args.noise,
        ema_alpha=getattr(args, "filter", None),
        inputs={k: Path(v) for k, v in inputs.items() if v is not None},
    )
    rc.check()
    return rc


def _write_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# --- commands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    rc = _run_config(args)
    layout, cfg = rc.load_layout(), rc.sim()
    session = simulate_log(layout, cfg, wire=args.wire)
    save_layout(layout, rc.out / LAYOUT_FILE)
    save_sim_config(cfg, rc.out / SIM_CONFIG_FILE)
    save_log(session.log, rc.out / LOG_FILE)
    print(f"{len(session.log)} samples, {session.log.n_taxels} taxels, "
          f"peak {session.log.pressures().max():.2f} kPa -> {rc.out / LOG_FILE}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    rc = _run_config(args, log=args.log)
    layout, cfg = rc.load_layout(), rc.sim()
    mesh = build_mesh(layout)
    if args.log:
        log = load_log(args.log, cfg.sample_rate)
        if log.n_taxels != layout.n_taxels:
            raise UsageError(f"log has {log.n_taxels} taxels, layout has {layout.n_taxels}")
    else:
        log = simulate_log(layout, cfg, wire=args.wire).log
        save_log(log, rc.out / LOG_FILE)
    segment = select_increasing_segment(log) if args.branch == "increasing" else decreasing_segment(log)
    cal_map = fit_map(segment, mesh.geometry_hash(), wrap_threshold_kpa=cfg.wrap_threshold_kpa)
    save_layout(layout, rc.out / LAYOUT_FILE)
    save_sim_config(cfg, rc.out / SIM_CONFIG_FILE)
    save_calibration(cal_map, rc.out / CALIBRATION_FILE)

    print(f"{'taxel':>5}  {'rmse_kPa':>9}  saturated")
    for t in cal_map.taxels:
        print(f"{t.taxel_id:>5}  {t.rmse_kpa:9.4f}  {'yes' if t.saturated else 'no'}")
    rmse = np.array([t.rmse_kpa for t in cal_map.taxels])
    n_sat = sum(t.saturated for t in cal_map.taxels)
    print(f"{len(cal_map)} taxels fitted up to {cal_map.max_calibrated_pressure:.2f} kPa; "
          f"rmse min/median/max {rmse.min():.4f}/{np.median(rmse):.4f}/{rmse.max():.4f} kPa; "
          f"{n_sat} saturated")
    return EXIT_OK


def cmd_validate(args) -> int:
    rc = _run_config(args, calibration=args.calibration, trials=args.trials)
    layout, cfg = rc.load_layout(), rc.sim()
    mesh = build_mesh(layout)
    cal_map = load_calibration(args.calibration)
    trials = load_trials(args.trials) if args.trials else default_trials(mesh)
    models = make_models(cfg, layout.cut_flags())
    result = run_validation(mesh, cal_map, cfg, models, trials, ema_alpha=rc.ema_alpha)
    write_trace(result.trace, rc.out / TRACE_FILE)
    _write_json(result.summary(), rc.out / SUMMARY_FILE)
    _write_json(trials_to_dict(trials), rc.out / TRIALS_FILE)
    for r in result.results:
        print(f"{r.trial.mass_kg:6.3f} kg  truth {r.trial.truth:7.3f} N  estimated {r.estimated_n:7.3f} N  "
              f"error {100 * r.error:6.2f} %")
    print(f"mean relative error {100 * result.mean_error:.2f} %")
    return EXIT_OK


def cmd_report(args) -> int:
    rc = _run_config(args, log=args.log, calibration=args.calibration, trace=args.trace, summary=args.summary)
    if not (args.log or args.trace):
        raise UsageError("report needs --log and/or --trace")
    cfg = rc.sim()
    written = []
    if args.log:
        log = load_log(args.log, cfg.sample_rate)
        if len(log) == 0:
            raise ParseError("log has no samples", 2)
        curve = report.average_curve(log)
        report.write_columns(curve, rc.out / "average_curve.csv")
        report.plot_average_curve(curve, rc.out / "average_curve.svg")
        written += ["average_curve.csv", "average_curve.svg"]
        if args.calibration:
            cal_map = load_calibration(args.calibration)
            fit = report.taxel_fit_curve(cal_map, log, args.taxel, cfg.wrap_threshold_kpa)
            report.write_columns({k: fit[k] for k in ("raw", "pressure_kpa")}, rc.out / "taxel_fit_samples.csv")
            report.write_columns({k: fit[k] for k in ("fit_raw", "fit_kpa")}, rc.out / "taxel_fit_curve.csv")
            report.plot_taxel_fit(fit, args.taxel, rc.out / "taxel_fit.svg")
            written += ["taxel_fit_samples.csv", "taxel_fit_curve.csv", "taxel_fit.svg"]
            cover = report.band_coverage(cal_map.taxels[args.taxel], fit["raw"], fit["pressure_kpa"],
                                         pressure_sigma=cfg.pressure_noise_sigma, count_sigma=cfg.noise_sigma)
            print(f"taxel {args.taxel}: {100 * cover:.2f} % of samples within 3 sigma of the fit")
    if args.trace:
        if not args.summary:
            raise UsageError("--trace needs --summary for the applied force")
        comparison = report.force_comparison(read_trace(args.trace), report.load_summary(args.summary))
        report.write_columns(comparison, rc.out / "force_comparison.csv")
        report.plot_force_comparison(comparison, rc.out / "force_comparison.svg")
        written += ["force_comparison.csv", "force_comparison.svg"]
    for name in written:
        print(rc.out / name)
    return EXIT_OK


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="simulator config JSON")
    common.add_argument("--layout", help="taxel layout JSON (default: 230-taxel forearm patch)")
    common.add_argument("--seed", type=int, help="simulator seed (unsigned 64-bit)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--noise", choices=["paper", "off"], help="noise preset applied on top of the config")

    ramp = argparse.ArgumentParser(add_help=False)
    ramp.add_argument("--ramp-rate", type=float, help="kPa/s")
    ramp.add_argument("--max-pressure", type=float, help="kPa, in (0, 300]")
    ramp.add_argument("--wire", action="store_true", help="route the simulated rig through the wire codecs")

    parser = argparse.ArgumentParser(prog="skincal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common, ramp], help="run a simulated calibration ramp and write its log")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common, ramp], help="simulate (or load) a ramp and fit every taxel")
    p.add_argument("--log", help="fit this log instead of simulating one")
    p.add_argument("--branch", choices=["increasing", "decreasing"], default="increasing")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("validate", parents=[common], help="masses-on-skin validation against a calibration")
    p.add_argument("--calibration", required=True)
    p.add_argument("--trials", help="trials JSON (default: ten weights of 0.2-2 kg)")
    p.add_argument("--filter", type=parse_filter, default=None, metavar="off|ema:ALPHA")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", parents=[common], help="figure tables and SVG plots")
    p.add_argument("--log")
    p.add_argument("--calibration")
    p.add_argument("--taxel", type=int, default=0)
    p.add_argument("--trace")
    p.add_argument("--summary")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InsufficientLevels as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("taxels: " + " ".join(str(t) for t in exc.taxels), file=sys.stderr)
        print("hint: lengthen the ramp (higher max pressure)", file=sys.stderr)
        return EXIT_DOMAIN
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SkincalError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

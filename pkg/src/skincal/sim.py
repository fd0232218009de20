"""Hardware-in-the-loop simulator of the pressure chamber and the capacitive skin.

The chamber follows a first-order regulator lag toward the commanded pressure.
The bladder consumes ``wrap_threshold_kpa`` before loading the skin. Each
taxel reports an 8-bit count that falls with pressure along a saturating
exponential; the fabric above it follows rising pressure at once and relaxes
slowly when pressure drops (hysteresis).

Randomness: every simulator owns a ``numpy.random.SeedSequence(seed)`` spawned
into independent PCG64 streams, in this order: taxel parameters, pressure
sensor noise, taxel noise during calibration, taxel noise during contact
(validation) sessions.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import protocols
from .calibration import CalibrationSample
from .errors import ParseError

SIM_CONFIG_VERSION = 1
DEVICE_MAX_KPA = 300.0

STREAM_PARAMS, STREAM_PRESSURE, STREAM_TAXELS, STREAM_CONTACT = range(4)


@dataclass(frozen=True)
class TaxelResponseModel:
    r0: float
    sensitivity: float
    tau_p: float
    is_cut: bool = False
    hysteresis_tau_down: float = 5.0
    noise_sigma: float = 0.5
    knee_kpa: float | None = None   # vacuum-bag preset: response frozen above the knee

    def __post_init__(self):
        if not 0.0 <= self.r0 <= 255.0:
            raise ValueError(f"rest reading {self.r0} outside [0, 255]")
        if not 0.0 <= self.sensitivity <= self.r0:
            raise ValueError(f"sensitivity {self.sensitivity} outside [0, r0={self.r0}]")
        if self.tau_p <= 0.0 or self.hysteresis_tau_down <= 0.0 or self.noise_sigma < 0.0:
            raise ValueError("time constants must be positive and noise non-negative")


@dataclass(frozen=True)
class ChamberState:
    commanded_kpa: float = 0.0
    actual_kpa: float = 0.0
    reported_kpa: float = 0.0
    regulator_tau: float = 0.5
    wrap_threshold_kpa: float = 2.0
    pressure_noise_sigma: float = 1.5
    fabric_state: tuple[float, ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        if self.actual_kpa < 0.0:
            raise ValueError(f"chamber pressure {self.actual_kpa} is negative")
        if not 0.0 <= self.commanded_kpa <= DEVICE_MAX_KPA:
            raise ValueError(f"commanded pressure {self.commanded_kpa} outside [0, {DEVICE_MAX_KPA}]")


@dataclass
class SimConfig:
    ramp_rate: float = 2.0
    max_pressure: float = 300.0
    sample_rate: float = 10.0
    seed: int = 0
    regulator_tau: float = 0.5
    wrap_threshold_kpa: float = 2.0
    pressure_noise_sigma: float = 1.5
    noise_sigma: float = 0.5
    hysteresis_tau_down: float = 5.0
    r0_range: tuple[float, float] = (200.0, 250.0)
    sensitivity_range: tuple[float, float] = (120.0, 200.0)
    tau_range: tuple[float, float] = (150.0, 300.0)
    cut_sensitivity: float = 5.0
    cut_tau: float = 40.0
    knee_kpa: float | None = None
    baseline_s: float = 2.0
    vent_rate: float | None = None
    vent_hold_s: float = 5.0
    attain_tol_kpa: float = 0.1
    timeout_s: float | None = None
    taxels: list[dict] | None = None

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not 0.0 <= self.max_pressure <= DEVICE_MAX_KPA:
            raise ValueError(f"max_pressure {self.max_pressure} outside [0, {DEVICE_MAX_KPA}]")
        if self.ramp_rate <= 0:
            raise ValueError("ramp_rate must be positive")
        for name in ("r0_range", "sensitivity_range", "tau_range"):
            setattr(self, name, tuple(float(x) for x in getattr(self, name)))

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        doc = {"version": SIM_CONFIG_VERSION}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            doc[f.name] = list(value) if isinstance(value, tuple) else value
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        doc = dict(doc)
        version = doc.pop("version", SIM_CONFIG_VERSION)
        if version != SIM_CONFIG_VERSION:
            raise ParseError(f"unsupported sim config version {version!r}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ParseError(f"unknown sim config fields: {sorted(unknown)}")
        return cls(**doc)


NOISE_PRESETS = {
    "paper": {"pressure_noise_sigma": 1.5, "noise_sigma": 0.5},
    "off": {"pressure_noise_sigma": 0.0, "noise_sigma": 0.0},
}


def apply_noise_preset(config: SimConfig, preset: str) -> SimConfig:
    try:
        return config.replace(**NOISE_PRESETS[preset])
    except KeyError:
        raise ValueError(f"unknown noise preset {preset!r}; choose from {sorted(NOISE_PRESETS)}") from None


def vacuum_bag_config(**overrides) -> SimConfig:
    """Comparison dataset: negative-pressure rig limited to ~100 kPa, response saturating at 55 kPa."""
    base = dict(max_pressure=100.0, knee_kpa=55.0)
    base.update(overrides)
    return SimConfig(**base)


def save_sim_config(config: SimConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_sim_config(path) -> SimConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from exc
    return SimConfig.from_dict(doc)


def rng_streams(seed: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(4)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def make_models(config: SimConfig, cut_flags) -> list[TaxelResponseModel]:
    """Per-taxel ground truth, drawn from the parameter stream unless listed explicitly."""
    cut_flags = np.asarray(cut_flags, dtype=bool)
    if config.taxels is not None:
        if len(config.taxels) != len(cut_flags):
            raise ValueError(f"config lists {len(config.taxels)} taxels, layout has {len(cut_flags)}")
        return [TaxelResponseModel(**t) for t in config.taxels]
    rng = rng_streams(config.seed)[STREAM_PARAMS]
    n = len(cut_flags)
    r0 = rng.uniform(*config.r0_range, size=n)
    sens = rng.uniform(*config.sensitivity_range, size=n)
    tau = rng.uniform(*config.tau_range, size=n)
    models = []
    for i in range(n):
        if cut_flags[i]:
            # rest value sits 3/4 of a code above an integer so the 5-count
            # swing of a cut pad still spans six quantization levels
            rest = math.floor(r0[i]) + 0.75
            m = TaxelResponseModel(rest, config.cut_sensitivity, config.cut_tau, True,
                                   config.hysteresis_tau_down, config.noise_sigma, config.knee_kpa)
        else:
            m = TaxelResponseModel(float(r0[i]), float(sens[i]), float(tau[i]), False,
                                   config.hysteresis_tau_down, config.noise_sigma, config.knee_kpa)
        models.append(m)
    return models


class ModelBank:
    """Column arrays of a model list for vectorized evaluation."""

    def __init__(self, models):
        self.models = list(models)
        self.r0 = np.array([m.r0 for m in self.models])
        self.sensitivity = np.array([m.sensitivity for m in self.models])
        self.tau_p = np.array([m.tau_p for m in self.models])
        self.tau_down = np.array([m.hysteresis_tau_down for m in self.models])
        self.noise_sigma = np.array([m.noise_sigma for m in self.models])
        self.knee = np.array([np.inf if m.knee_kpa is None else m.knee_kpa for m in self.models])
        self.is_cut = np.array([m.is_cut for m in self.models])

    def __len__(self):
        return len(self.models)

    def reading(self, p_eff) -> np.ndarray:
        p = np.minimum(np.asarray(p_eff, dtype=float), self.knee)
        return self.r0 - self.sensitivity * -np.expm1(-p / self.tau_p)


def effective_pressure(chamber_kpa: float, wrap_threshold: float) -> float:
    return max(0.0, chamber_kpa - wrap_threshold)


def ground_truth_reading(model: TaxelResponseModel, p_eff: float) -> float:
    p = p_eff if model.knee_kpa is None else min(p_eff, model.knee_kpa)
    return model.r0 - model.sensitivity * -math.expm1(-p / model.tau_p)


def quantize(reading):
    """Round half away from zero, then clamp to the 8-bit range."""
    x = np.asarray(reading, dtype=float)
    q = np.clip(np.sign(x) * np.floor(np.abs(x) + 0.5), 0, 255).astype(np.int64)
    return int(q) if q.ndim == 0 else q


def step_chamber(state: ChamberState, dt: float, commanded: float,
                 rng: np.random.Generator | None = None) -> ChamberState:
    """Advance the regulator lag by ``dt`` and draw a new pressure sensor report."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    actual = state.actual_kpa + (commanded - state.actual_kpa) * -math.expm1(-dt / state.regulator_tau)
    actual = max(actual, 0.0)
    noise = 0.0
    if state.pressure_noise_sigma > 0.0:
        if rng is None:
            raise ValueError("a random stream is required when pressure noise is enabled")
        noise = rng.normal(0.0, state.pressure_noise_sigma)
    return dataclasses.replace(state, commanded_kpa=commanded, actual_kpa=actual, reported_kpa=actual + noise)


def relax_fabric(fabric, p_eff, dt: float, tau_down) -> np.ndarray:
    f = np.asarray(fabric, dtype=float)
    p = np.broadcast_to(np.asarray(p_eff, dtype=float), f.shape)
    relaxed = p + (f - p) * np.exp(-dt / np.asarray(tau_down, dtype=float))
    return np.where(p >= f, p, relaxed)


def read_taxels(state: ChamberState, models, p_eff, dt: float,
                rng: np.random.Generator | None = None) -> tuple[ChamberState, np.ndarray]:
    """Update fabric memory under pressure ``p_eff`` (scalar or per taxel) and read counts."""
    bank = models if isinstance(models, ModelBank) else ModelBank(models)
    fabric = np.asarray(state.fabric_state, dtype=float)
    if fabric.shape != (len(bank),):
        fabric = np.zeros(len(bank))
    fabric = relax_fabric(fabric, p_eff, dt, bank.tau_down)
    truth = bank.reading(fabric)
    if (bank.noise_sigma > 0).any():
        if rng is None:
            raise ValueError("a random stream is required when taxel noise is enabled")
        truth = truth + rng.normal(0.0, 1.0, size=len(bank)) * bank.noise_sigma
    counts = quantize(truth)
    return dataclasses.replace(state, fabric_state=tuple(fabric.tolist())), counts


class PlenumRig:
    """Simulated calibration device: accepts pressure commands, yields samples.

    With ``wire=True`` commands travel as serial ``SET`` lines, reported
    pressure returns as ``ACT`` lines, and taxel frames round-trip through
    the skin frame codec.
    """

    def __init__(self, config: SimConfig, models, module_ids=None, wire: bool = False):
        self.config = config
        self.bank = ModelBank(models)
        streams = rng_streams(config.seed)
        self._pressure_rng = streams[STREAM_PRESSURE]
        self._taxel_rng = streams[STREAM_TAXELS]
        self.state = ChamberState(
            regulator_tau=config.regulator_tau,
            wrap_threshold_kpa=config.wrap_threshold_kpa,
            pressure_noise_sigma=config.pressure_noise_sigma,
            fabric_state=(0.0,) * len(self.bank),
            rng_seed=config.seed,
        )
        self.wire = wire
        self.module_ids = list(module_ids) if module_ids is not None else list(range(len(self.bank) // 10))
        if wire and len(self.module_ids) * 10 != len(self.bank):
            raise ValueError("wire mode needs whole 10-taxel modules")
        self._commanded = 0.0
        self._step = 0
        self.frames_sent = 0

    def command(self, kpa: float) -> None:
        kpa = min(max(kpa, 0.0), DEVICE_MAX_KPA)
        if self.wire:
            line = protocols.encode_msg(protocols.RegulatorMsg(protocols.MsgKind.SET, protocols.kpa_to_millikpa(kpa)))
            kpa = protocols.decode_msg(line).kpa
        self._commanded = kpa

    def read(self) -> CalibrationSample:
        dt = self.config.dt
        self._step += 1
        self.state = step_chamber(self.state, dt, self._commanded, self._pressure_rng)
        p_eff = effective_pressure(self.state.actual_kpa, self.state.wrap_threshold_kpa)
        self.state, counts = read_taxels(self.state, self.bank, p_eff, dt, self._taxel_rng)
        reported = self.state.reported_kpa
        if self.wire:
            counts = self._through_frames(counts)
            clipped = min(max(reported, 0.0), DEVICE_MAX_KPA)
            line = protocols.encode_msg(protocols.RegulatorMsg(protocols.MsgKind.ACTUAL, protocols.kpa_to_millikpa(clipped)))
            reported = protocols.decode_msg(line).kpa
        return CalibrationSample(self._step * dt, float(reported), tuple(int(c) for c in counts))

    def _through_frames(self, counts) -> np.ndarray:
        out = np.empty(len(counts), dtype=np.int64)
        seq = self._step % 128
        for k, mid in enumerate(self.module_ids):
            frames = protocols.encode_module(mid, counts[10 * k:10 * k + 10], (100, 100), seq)
            _, taxels, _, _ = protocols.decode_module(frames)
            out[10 * k:10 * k + 10] = taxels
            self.frames_sent += 2
        return out


class ContactRig:
    """Skin outside the chamber under direct per-taxel loads (masses on the skin)."""

    def __init__(self, config: SimConfig, models):
        self.config = config
        self.bank = ModelBank(models)
        self._rng = rng_streams(config.seed)[STREAM_CONTACT]
        self.state = ChamberState(fabric_state=(0.0,) * len(self.bank), pressure_noise_sigma=0.0)

    def frame(self, taxel_kpa) -> np.ndarray:
        self.state, counts = read_taxels(self.state, self.bank, taxel_kpa, self.config.dt, self._rng)
        return counts

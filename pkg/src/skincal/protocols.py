"""Bit-exact codecs for skin taxel frames and the regulator serial link.

Skin frames: each 10-taxel module is sent as two 8-byte CAN payloads on
id 0x200 | module_id. Byte 0 of each payload packs the frame index (bit 7)
and a 7-bit sequence counter shared by both frames of a module sample.

    frame 0: [hdr, t0, t1, t2, t3, t4, t5, t6]
    frame 1: [hdr, t7, t8, t9, temp0, temp1, 0x00, 0x00]

Regulator link: ASCII lines ``SET <millikpa>\\n`` / ``ACT <millikpa>\\n``.

Electrical scaling: 0..300 kPa maps linearly onto the regulator's 0..10 V
input; the 3.3 V microcontroller drives it through a x3 non-inverting
amplifier and reads the feedback through a 1/3 divider.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .errors import IdMismatch, IndexOrder, Malformed, ModuleIdRange, RangeExceeded, SeqMismatch

SKIN_BASE_ID = 0x200
MAX_MODULE_ID = 127
MAX_MILLIKPA = 300_000

REGULATOR_FULL_SCALE_KPA = 300.0
REGULATOR_FULL_SCALE_V = 10.0
AMPLIFIER_GAIN = 3.0
DIVIDER_RATIO = 3.0
MCU_VOLTS_MAX = 3.334


@dataclass(frozen=True)
class SkinFrame:
    can_id: int
    payload: bytes

    def __post_init__(self):
        if len(self.payload) != 8:
            raise Malformed(f"skin frame payload must be 8 bytes, got {len(self.payload)}")
        if not 0 <= self.can_id < 0x800:
            raise Malformed(f"can id {self.can_id:#x} is not an 11-bit identifier")

    @property
    def frame_index(self) -> int:
        return self.payload[0] >> 7

    @property
    def seq(self) -> int:
        return self.payload[0] & 0x7F


def _byte(value, what) -> int:
    v = int(value)
    if not 0 <= v <= 0xFF:
        raise RangeExceeded(f"{what} {value!r} does not fit in one byte")
    return v


def encode_module(module_id: int, taxel_counts, temps=(0, 0), seq: int = 0) -> tuple[SkinFrame, SkinFrame]:
    if not 0 <= module_id <= MAX_MODULE_ID:
        raise ModuleIdRange(f"module id {module_id} outside [0, {MAX_MODULE_ID}]")
    taxels = [_byte(c, "taxel count") for c in taxel_counts]
    if len(taxels) != 10:
        raise Malformed(f"a module carries 10 taxels, got {len(taxels)}")
    temps = [_byte(t, "temperature") for t in temps]
    if len(temps) != 2:
        raise Malformed(f"a module carries 2 temperatures, got {len(temps)}")
    s = seq & 0x7F
    can_id = SKIN_BASE_ID | module_id
    f0 = SkinFrame(can_id, bytes([s, *taxels[:7]]))
    f1 = SkinFrame(can_id, bytes([0x80 | s, *taxels[7:], *temps, 0, 0]))
    return f0, f1


def decode_module(frames) -> tuple[int, list[int], list[int], int]:
    """Inverse of :func:`encode_module`; returns (module_id, taxels, temps, seq)."""
    f0, f1 = frames
    if f0.can_id != f1.can_id:
        raise IdMismatch(f"frames carry ids {f0.can_id:#x} and {f1.can_id:#x}")
    if f0.can_id & ~MAX_MODULE_ID != SKIN_BASE_ID:
        raise IdMismatch(f"id {f0.can_id:#x} is not a skin module id")
    if (f0.frame_index, f1.frame_index) != (0, 1):
        raise IndexOrder(f"expected frame indices (0, 1), got ({f0.frame_index}, {f1.frame_index})")
    if f0.seq != f1.seq:
        raise SeqMismatch(f"sequence counters differ: {f0.seq} vs {f1.seq}")
    taxels = list(f0.payload[1:8]) + list(f1.payload[1:4])
    temps = list(f1.payload[4:6])
    return f0.can_id & MAX_MODULE_ID, taxels, temps, f0.seq


# --- analogue scaling ------------------------------------------------------

def pressure_to_regulator_volts(kpa: float) -> float:
    if not 0.0 <= kpa <= REGULATOR_FULL_SCALE_KPA:
        raise RangeExceeded(f"pressure {kpa} kPa outside [0, {REGULATOR_FULL_SCALE_KPA}]")
    return kpa * (REGULATOR_FULL_SCALE_V / REGULATOR_FULL_SCALE_KPA)


def pressure_to_dac_volts(kpa: float) -> float:
    """Microcontroller DAC output that commands ``kpa`` through the x3 amplifier."""
    volts = pressure_to_regulator_volts(kpa) / AMPLIFIER_GAIN
    if volts > MCU_VOLTS_MAX:
        raise RangeExceeded(f"DAC voltage {volts} V above {MCU_VOLTS_MAX} V")
    return volts


def amplifier_output(dac_volts: float) -> float:
    return dac_volts * AMPLIFIER_GAIN


def divider_output(regulator_volts: float) -> float:
    return regulator_volts / DIVIDER_RATIO


def adc_volts_to_pressure(volts: float) -> float:
    """Chamber pressure from the divided-down feedback voltage at the ADC pin."""
    if not 0.0 <= volts <= MCU_VOLTS_MAX:
        raise RangeExceeded(f"ADC voltage {volts} V outside [0, {MCU_VOLTS_MAX}]")
    return volts * DIVIDER_RATIO * (REGULATOR_FULL_SCALE_KPA / REGULATOR_FULL_SCALE_V)


# --- serial link -----------------------------------------------------------

class MsgKind(enum.Enum):
    SET = "SET"
    ACTUAL = "ACT"


@dataclass(frozen=True)
class RegulatorMsg:
    kind: MsgKind
    pressure_millikpa: int

    def __post_init__(self):
        if not isinstance(self.pressure_millikpa, int) or isinstance(self.pressure_millikpa, bool):
            raise Malformed(f"pressure must be an integer millikPa, got {self.pressure_millikpa!r}")
        if not 0 <= self.pressure_millikpa <= MAX_MILLIKPA:
            raise RangeExceeded(f"{self.pressure_millikpa} millikPa outside [0, {MAX_MILLIKPA}]")

    @property
    def kpa(self) -> float:
        return self.pressure_millikpa / 1000.0


_LINE = re.compile(rb"(SET|ACT) ([0-9]+)\n")


def encode_msg(msg: RegulatorMsg) -> bytes:
    return f"{msg.kind.value} {msg.pressure_millikpa}\n".encode("ascii")


def decode_msg(line: bytes | str) -> RegulatorMsg:
    if isinstance(line, str):
        try:
            line = line.encode("ascii")
        except UnicodeEncodeError as exc:
            raise Malformed(f"non-ASCII serial line {line!r}") from exc
    m = _LINE.fullmatch(line)
    if m is None:
        raise Malformed(f"malformed serial line {line!r}")
    value = int(m.group(2))
    if value > MAX_MILLIKPA:
        raise RangeExceeded(f"{value} millikPa outside [0, {MAX_MILLIKPA}]")
    return RegulatorMsg(MsgKind(m.group(1).decode()), value)


def kpa_to_millikpa(kpa: float) -> int:
    return int(round(kpa * 1000.0))

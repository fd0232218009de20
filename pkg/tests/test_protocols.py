import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skincal.errors import IdMismatch, IndexOrder, Malformed, ModuleIdRange, RangeExceeded, SeqMismatch
from skincal.protocols import (
    MsgKind,
    RegulatorMsg,
    SkinFrame,
    adc_volts_to_pressure,
    amplifier_output,
    decode_module,
    decode_msg,
    divider_output,
    encode_module,
    encode_msg,
    pressure_to_dac_volts,
    pressure_to_regulator_volts,
)

N_CASES = 10_000
N_EXTRA = 2_000

module_ids = st.integers(0, 127)
taxels = st.lists(st.integers(0, 255), min_size=10, max_size=10)
temps = st.lists(st.integers(0, 255), min_size=2, max_size=2)
seqs = st.integers(0, 127)
modules = st.tuples(module_ids, taxels, temps, seqs)
messages = st.builds(RegulatorMsg, st.sampled_from(list(MsgKind)), st.integers(0, 300_000))


# --- skin frames ------------------------------------------------------------

def test_encode_example():
    f0, f1 = encode_module(3, list(range(10, 20)), (100, 101), 0)
    assert f0.can_id == f1.can_id == 0x203
    assert f0.payload == bytes.fromhex("000A0B0C0D0E0F10")
    assert f1.payload == bytes.fromhex("8011121364650000")


def test_decode_example():
    frames = (SkinFrame(0x203, bytes.fromhex("000A0B0C0D0E0F10")),
              SkinFrame(0x203, bytes.fromhex("8011121364650000")))
    assert decode_module(frames) == (3, list(range(10, 20)), [100, 101], 0)


def test_module_id_out_of_range():
    with pytest.raises(ModuleIdRange):
        encode_module(128, [0] * 10)
    with pytest.raises(ModuleIdRange):
        encode_module(-1, [0] * 10)


def test_seq_mismatch():
    f0, _ = encode_module(5, [1] * 10, seq=3)
    _, f1 = encode_module(5, [1] * 10, seq=4)
    with pytest.raises(SeqMismatch):
        decode_module((f0, f1))


def test_two_index_zero_frames():
    f0, _ = encode_module(5, [1] * 10)
    with pytest.raises(IndexOrder):
        decode_module((f0, f0))


def test_swapped_frames():
    f0, f1 = encode_module(5, [1] * 10)
    with pytest.raises(IndexOrder):
        decode_module((f1, f0))


def test_id_mismatch():
    f0, _ = encode_module(5, [1] * 10)
    _, f1 = encode_module(6, [1] * 10)
    with pytest.raises(IdMismatch):
        decode_module((f0, f1))


def test_taxel_count_must_fit_a_byte():
    with pytest.raises(RangeExceeded):
        encode_module(0, [256] + [0] * 9)


@settings(max_examples=N_CASES, deadline=None)
@given(modules)
def test_skin_frame_round_trip(m):
    mid, tax, tmp, seq = m
    frames = encode_module(mid, tax, tmp, seq)
    assert all(len(f.payload) == 8 for f in frames)
    assert all(f.can_id == 0x200 | mid for f in frames)
    assert [f.frame_index for f in frames] == [0, 1]
    assert frames[1].payload[6:] == b"\x00\x00"
    assert decode_module(frames) == (mid, tax, tmp, seq)


def test_skin_frame_fields_independent():
    """Changing any single field (id, taxel, temperature, seq) changes the encoding."""
    rng = np.random.default_rng(7)
    for _ in range(2000):
        mid, seq = int(rng.integers(0, 128)), int(rng.integers(0, 128))
        tax, tmp = rng.integers(0, 256, 10).tolist(), rng.integers(0, 256, 2).tolist()
        base = encode_module(mid, tax, tmp, seq)
        assert encode_module((mid + int(rng.integers(1, 128))) % 128, tax, tmp, seq) != base
        assert encode_module(mid, tax, tmp, (seq + int(rng.integers(1, 128))) % 128) != base
        for k in range(10):
            t2 = list(tax)
            t2[k] = (t2[k] + int(rng.integers(1, 256))) % 256
            assert encode_module(mid, t2, tmp, seq) != base
        for k in range(2):
            m2 = list(tmp)
            m2[k] = (m2[k] + int(rng.integers(1, 256))) % 256
            assert encode_module(mid, tax, m2, seq) != base


# --- serial link ------------------------------------------------------------

def test_serial_examples():
    assert encode_msg(RegulatorMsg(MsgKind.SET, 150_000)) == b"SET 150000\n"
    assert decode_msg(b"ACT 042\n") == RegulatorMsg(MsgKind.ACTUAL, 42)
    assert decode_msg("SET 0\n") == RegulatorMsg(MsgKind.SET, 0)


@pytest.mark.parametrize("line", [b"SET -5\n", b"SET 5", b"set 5\n", b"SET  5\n", b"SET 5\r\n",
                                  b"ACT\n", b"FOO 1\n", b"SET 1.5\n", b"", "SET ٥\n"])
def test_serial_malformed(line):
    with pytest.raises(Malformed):
        decode_msg(line)


def test_serial_range():
    with pytest.raises(RangeExceeded):
        decode_msg(b"SET 300001\n")
    with pytest.raises(RangeExceeded):
        RegulatorMsg(MsgKind.SET, 300_001)
    with pytest.raises(RangeExceeded):
        RegulatorMsg(MsgKind.ACTUAL, -1)


@settings(max_examples=N_CASES, deadline=None)
@given(messages)
def test_serial_round_trip(msg):
    line = encode_msg(msg)
    assert line.endswith(b"\n") and line.count(b"\n") == 1
    assert decode_msg(line) == msg


@settings(max_examples=N_EXTRA, deadline=None)
@given(st.binary(max_size=16))
def test_serial_decoder_never_crashes(data):
    try:
        msg = decode_msg(data)
    except (Malformed, RangeExceeded):
        return
    # anything accepted re-encodes to the canonical form of the same message
    assert decode_msg(encode_msg(msg)) == msg


# --- voltages ---------------------------------------------------------------

def test_voltage_examples():
    assert pressure_to_dac_volts(0.0) == 0.0
    assert pressure_to_dac_volts(300.0) == pytest.approx(10.0 / 3.0, abs=1e-12)
    assert pressure_to_regulator_volts(300.0) == pytest.approx(10.0, abs=1e-12)
    assert pressure_to_dac_volts(150.0) == pytest.approx(1.6667, abs=1e-4)
    assert adc_volts_to_pressure(0.0) == 0.0
    assert adc_volts_to_pressure(1.0) == pytest.approx(90.0, abs=1e-12)


@pytest.mark.parametrize("kpa", [-0.001, 300.001, float("nan")])
def test_pressure_out_of_range(kpa):
    with pytest.raises(RangeExceeded):
        pressure_to_dac_volts(kpa)


@pytest.mark.parametrize("volts", [-0.001, 3.3341])
def test_adc_out_of_range(volts):
    with pytest.raises(RangeExceeded):
        adc_volts_to_pressure(volts)


@settings(max_examples=N_CASES, deadline=None)
@given(st.floats(0.0, 300.0))
def test_voltage_round_trip(kpa):
    dac = pressure_to_dac_volts(kpa)
    assert 0.0 <= dac <= 3.334
    regulator = amplifier_output(dac)
    assert regulator == pytest.approx(pressure_to_regulator_volts(kpa), abs=1e-12)
    assert adc_volts_to_pressure(divider_output(regulator)) == pytest.approx(kpa, abs=1e-9)


@settings(max_examples=N_EXTRA, deadline=None)
@given(st.floats(0.0, 300.0), st.floats(0.0, 300.0))
def test_voltage_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert pressure_to_dac_volts(lo) <= pressure_to_dac_volts(hi)
    vlo, vhi = lo / 90.0, hi / 90.0
    assert adc_volts_to_pressure(vlo) <= adc_volts_to_pressure(vhi)

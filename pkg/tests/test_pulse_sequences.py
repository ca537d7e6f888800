import json
import math

import pytest

from pulse_sequences import (
    ProtocolParams,
    PulseSegment,
    ReadoutMarker,
    Sequence,
    SequenceFormatError,
    mw_pair_duration_ns,
    mw_pulse,
    parse_sequence_file,
    seq_mw_to_opt,
    seq_opt_to_mw,
    seq_optical_pumping,
    sequence_to_dict,
    serialize_sequence,
)
from drive_hamiltonian import DriveField, optical_pair


def test_mw_pulse_timing():
    assert mw_pulse("G0-GM", 0.0, math.pi, 0.91).duration_ns == pytest.approx(549.45, abs=0.01)
    assert mw_pulse("G0-GP", 0.0, math.pi / 2, 0.91).duration_ns == pytest.approx(274.73, abs=0.01)
    assert mw_pair_duration_ns(0.91) == pytest.approx(549.45 / math.sqrt(2), abs=0.01)


def test_mw_pulse_rejects_optical_transitions():
    with pytest.raises(SequenceFormatError, match="MW transition"):
        mw_pulse("GM-A2", 0.0, math.pi)
    with pytest.raises(SequenceFormatError, match="allowed"):
        mw_pulse("G0-A2", 0.0, math.pi)


def test_mw_to_opt_layout():
    seq = seq_mw_to_opt(0.5, 0.1, 0.7, 0.2)
    assert [s.label for s in seq.segments] == ["green_reset", "mw_G0-GM", "mw_G0-GP", "optical_readout"]
    assert seq.initial_level == "G0"
    gm, gp = seq.segments[1].fields[0], seq.segments[2].fields[0]
    assert (gm.phase_rad, gp.phase_rad) == (0.1, 0.5)
    assert seq.segments[2].duration_ns == pytest.approx(2 * seq.segments[1].duration_ns)
    assert seq.readout_segments() == [3]
    assert seq.segments[3].readout.level == "A2"
    assert set(seq.segments[3].transitions) == {"GM-A2", "GP-A2"}


def test_opt_to_mw_layout():
    seq = seq_opt_to_mw((0.3, 0.0), (1.0, 0.2), 100.0)
    assert [s.label for s in seq.segments] == [
        "green_reset", "mw_G0-GM", "optical_pumping", "delay", "mw_readout"
    ]
    readout = seq.segments[-1]
    assert readout.readout.level == "G0"
    assert readout.readout.t0_offset_ns == pytest.approx(readout.duration_ns)
    assert seq.segments[3].duration_ns == 100.0
    assert seq.segments[2].duration_ns == 500.0


def test_opt_to_mw_ey_readout():
    seq = seq_opt_to_mw((0.0, 0.0), (0.0, 0.0), 0.0, ProtocolParams(ey_readout=True))
    assert seq.segments[-2].readout is None
    assert seq.segments[-1].label == "ey_readout"
    assert seq.segments[-1].transitions == ("G0-EY",)
    assert seq.segments[-1].readout.level == "EY"


def test_opt_to_mw_rejects_negative_delay():
    with pytest.raises(SequenceFormatError, match="delay_ns"):
        seq_opt_to_mw((0.0, 0.0), (0.0, 0.0), -1.0)


def test_optical_pumping_layout():
    seq = seq_optical_pumping("GM", 20.0, 300.0)
    assert seq.initial_level == "GM"
    assert seq.total_duration_ns == 300.0
    assert seq.segments[1].fields[0].detuning_mhz == 20.0
    assert seq.segments[1].readout.window_ns == 300.0


def test_segment_offsets():
    seq = Sequence("s", (PulseSegment(0.0), PulseSegment(10.0), PulseSegment(5.0)))
    assert seq.segment_offsets() == [0.0, 0.0, 10.0]
    assert seq.total_duration_ns == 15.0


def test_readout_window_must_fit():
    with pytest.raises(SequenceFormatError, match="window"):
        PulseSegment(10.0, optical_pair(27.0), ReadoutMarker("A2", 0.0, 28.0))
    with pytest.raises(SequenceFormatError, match="level"):
        ReadoutMarker("Ex")


def test_segment_rejects_duplicates_and_negative_duration():
    with pytest.raises(SequenceFormatError, match="duplicate"):
        PulseSegment(1.0, (DriveField.on("G0-GM", 1.0), DriveField.on("G0-GM", 1.0)))
    with pytest.raises(SequenceFormatError, match="duration_ns"):
        PulseSegment(-1.0)


def test_protocol_params_validation():
    with pytest.raises(ValueError, match="readout_t0_ns"):
        ProtocolParams(optical_readout_ns=20.0)
    with pytest.raises(ValueError, match="rabi_opt_mhz"):
        ProtocolParams(rabi_opt_mhz=0.0)


@pytest.mark.parametrize(
    "seq",
    [
        seq_mw_to_opt(0.4, -0.3, 1.2, 0.0),
        seq_opt_to_mw((0.3, 0.1), (2.0, 0.5), 250.0, ProtocolParams(ey_readout=True)),
        seq_optical_pumping("GP", -3.5, 120.0),
    ],
)
def test_json_round_trip(seq):
    assert parse_sequence_file(serialize_sequence(seq)) == seq


def test_serialized_format():
    data = sequence_to_dict(seq_mw_to_opt(0.0, 0.0, 0.0, 0.0))
    assert data["schema"] == 1
    assert data["segments"][3]["readout"] == {"level": "A2", "t0_offset_ns": 0.0, "window_ns": 28.0}
    assert "readout" not in data["segments"][1]


def test_parse_reports_json_location():
    with pytest.raises(SequenceFormatError, match="line 2 column"):
        parse_sequence_file('{"schema": 1,\n "name": }')


def _document(field):
    return json.dumps(
        {
            "schema": 1,
            "name": "bad",
            "segments": [{"duration_ns": 5.0}, {"duration_ns": 5.0, "fields": [field]}],
        }
    )


def test_parse_names_segment_and_field():
    with pytest.raises(SequenceFormatError, match="segment 1 field 0") as err:
        parse_sequence_file(_document({"transition": "G0-A2", "rabi_mhz": 1.0}))
    assert "G0-GM" in str(err.value)

    with pytest.raises(SequenceFormatError, match=r"segment 1 field 0.rabi_mhz"):
        parse_sequence_file(_document({"transition": "G0-GM", "rabi_mhz": "fast"}))

    with pytest.raises(SequenceFormatError, match="missing field 'rabi_mhz'"):
        parse_sequence_file(_document({"transition": "G0-GM"}))


def test_parse_rejects_schema_and_bad_readout():
    with pytest.raises(SequenceFormatError, match="schema"):
        parse_sequence_file('{"schema": 2, "name": "x", "segments": []}')
    text = json.dumps(
        {"schema": 1, "name": "x", "segments": [{"duration_ns": 5.0, "readout": {"level": "Ex"}}]}
    )
    with pytest.raises(SequenceFormatError, match="segment 0"):
        parse_sequence_file(text)

"""
Pulse Sequences

Ordered piecewise-constant drive schedules with readout markers, the two
phase-transfer protocols as builders, and the JSON sequence format.

Key Features:
- Resonant MW rotation segments from a rotation angle
- MW -> optical transfer: reset, pi/2 (G0-GM), pi (G0-GP), optical pair readout
- Optical -> MW transfer: reset, pi to GM, optical pumping, delay, MW pair readout
- Optical pumping / CPT segments from a chosen ground level
- JSON serialization ("schema": 1) and parsing with segment/field diagnostics

Initialization is an ideal reset to the sequence's initial_level; builders
mark it with a zero-duration "green_reset" segment.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple
import json
import logging
import math

from drive_hamiltonian import (
    MW_TRANSITIONS,
    TRANSITION_NAMES,
    DriveConfigError,
    DriveField,
    check_fields,
    mw_pair,
    optical_pair,
    transition_name,
)
from nv_levels import NV_SCHEME, UnknownLevelError
from sim_defaults import (
    MW_RABI_MHZ,
    OPTICAL_RABI_MHZ,
    READOUT_WINDOW_NS,
    SEQUENCE_SCHEMA,
    mhz_to_rad_per_ns,
)

logger = logging.getLogger(__name__)

WINDOW_TOL = 1e-9


class SequenceFormatError(ValueError):
    """Raised for invalid segments or malformed sequence files."""


@dataclass(frozen=True)
class ReadoutMarker:
    """Detection window inside a segment: A2/EY fluorescence or G0 population."""

    level: str
    t0_offset_ns: float = 0.0
    window_ns: float = READOUT_WINDOW_NS

    def __post_init__(self):
        try:
            NV_SCHEME.index(self.level)
        except UnknownLevelError as exc:
            raise SequenceFormatError(f"readout.level: {exc}") from None
        for name in ("t0_offset_ns", "window_ns"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise SequenceFormatError(f"readout.{name}: must be >= 0, got {value}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class PulseSegment:
    duration_ns: float
    fields: Tuple[DriveField, ...] = ()
    readout: Optional[ReadoutMarker] = None
    label: str = ""

    def __post_init__(self):
        duration = float(self.duration_ns)
        if not math.isfinite(duration) or duration < 0:
            raise SequenceFormatError(f"duration_ns: must be >= 0, got {self.duration_ns!r}")
        object.__setattr__(self, "duration_ns", duration)
        try:
            object.__setattr__(self, "fields", check_fields(self.fields))
        except DriveConfigError as exc:
            raise SequenceFormatError(str(exc)) from None
        if self.readout is not None:
            end = self.readout.t0_offset_ns + self.readout.window_ns
            if end > duration + WINDOW_TOL:
                raise SequenceFormatError(
                    f"readout: window ends at {end} ns, beyond the {duration} ns segment"
                )

    @property
    def transitions(self) -> Tuple[str, ...]:
        return tuple(item.name for item in self.fields)


@dataclass(frozen=True)
class Sequence:
    name: str
    segments: Tuple[PulseSegment, ...] = ()
    initial_level: str = "G0"

    def __post_init__(self):
        if not str(self.name).strip():
            raise SequenceFormatError("name: must be nonempty")
        try:
            NV_SCHEME.index(self.initial_level)
        except UnknownLevelError as exc:
            raise SequenceFormatError(f"initial_level: {exc}") from None
        segments = tuple(self.segments)
        for index, segment in enumerate(segments):
            if not isinstance(segment, PulseSegment):
                raise SequenceFormatError(f"segment {index}: expected PulseSegment")
        object.__setattr__(self, "segments", segments)

    @property
    def total_duration_ns(self) -> float:
        return sum(segment.duration_ns for segment in self.segments)

    def segment_offsets(self) -> List[float]:
        offsets, elapsed = [], 0.0
        for segment in self.segments:
            offsets.append(elapsed)
            elapsed += segment.duration_ns
        return offsets

    def readout_segments(self) -> List[int]:
        return [index for index, segment in enumerate(self.segments) if segment.readout is not None]


@dataclass(frozen=True)
class ProtocolParams:
    """Drive strengths and timing shared by the built-in protocols."""

    rabi_mw_mhz: float = MW_RABI_MHZ
    rabi_opt_mhz: float = OPTICAL_RABI_MHZ
    optical_readout_ns: float = 150.0  # >= 5 pumping times
    readout_t0_ns: float = 0.0
    window_ns: float = READOUT_WINDOW_NS
    pumping_ns: float = 500.0
    ey_readout: bool = False
    ey_rabi_mhz: float = OPTICAL_RABI_MHZ

    def __post_init__(self):
        for name in ("rabi_mw_mhz", "rabi_opt_mhz", "ey_rabi_mhz"):
            if float(getattr(self, name)) <= 0:
                raise ValueError(f"{name}: must be > 0, got {getattr(self, name)!r}")
        for name in ("optical_readout_ns", "pumping_ns", "window_ns"):
            if float(getattr(self, name)) <= 0:
                raise ValueError(f"{name}: must be > 0, got {getattr(self, name)!r}")
        if self.readout_t0_ns < 0 or self.readout_t0_ns + self.window_ns > self.optical_readout_ns:
            raise ValueError(
                f"readout_t0_ns: window [{self.readout_t0_ns}, "
                f"{self.readout_t0_ns + self.window_ns}] ns must fit in the optical segment"
            )


def _reset() -> PulseSegment:
    return PulseSegment(0.0, (), None, "green_reset")


def mw_pulse(transition, phase_rad: float, angle_rad: float, rabi_mhz: float = MW_RABI_MHZ) -> PulseSegment:
    """
    Resonant MW rotation by ``angle_rad``.

    Returns:
        PulseSegment lasting angle / (2 pi rabi 1e-3) ns (pi at 0.91 MHz -> 549.5 ns)
    """
    try:
        name = transition_name(transition)
    except DriveConfigError as exc:
        raise SequenceFormatError(str(exc)) from None
    if name not in MW_TRANSITIONS:
        raise SequenceFormatError(f"{name} is not a MW transition; use one of {', '.join(sorted(MW_TRANSITIONS))}")
    if angle_rad < 0:
        raise SequenceFormatError(f"angle_rad: must be >= 0, got {angle_rad}")
    if rabi_mhz <= 0:
        raise SequenceFormatError(f"rabi_mhz: must be > 0, got {rabi_mhz}")
    duration = angle_rad / mhz_to_rad_per_ns(rabi_mhz)
    pulse = DriveField.on(name, rabi_mhz, 0.0, phase_rad)
    return PulseSegment(duration, (pulse,), None, f"mw_{name}")


def mw_pair_duration_ns(rabi_mhz: float) -> float:
    """tau = pi / (sqrt(2) Omega): pi pulse on the bright transition of the MW pair."""
    return math.pi / (math.sqrt(2.0) * mhz_to_rad_per_ns(rabi_mhz))


def seq_mw_to_opt(
    phi_plus_mw: float,
    phi_minus_mw: float,
    phi_plus_opt: float,
    phi_minus_opt: float,
    params: ProtocolParams = ProtocolParams(),
) -> Sequence:
    """Reset, pi/2 on G0-GM (phi-), pi on G0-GP (phi+), optical pair with an A2 readout window."""
    optical = PulseSegment(
        params.optical_readout_ns,
        optical_pair(params.rabi_opt_mhz, phi_plus_opt, phi_minus_opt),
        ReadoutMarker("A2", params.readout_t0_ns, params.window_ns),
        "optical_readout",
    )
    return Sequence(
        "mw_to_opt",
        (
            _reset(),
            mw_pulse("G0-GM", phi_minus_mw, math.pi / 2, params.rabi_mw_mhz),
            mw_pulse("G0-GP", phi_plus_mw, math.pi, params.rabi_mw_mhz),
            optical,
        ),
        "G0",
    )


def seq_opt_to_mw(
    phi_opt_pair: Tuple[float, float],
    phi_mw_pair: Tuple[float, float],
    delay_ns: float,
    params: ProtocolParams = ProtocolParams(),
) -> Sequence:
    """
    Optical -> MW phase transfer.

    Args:
        phi_opt_pair: (phi+, phi-) of the pumping fields on GP-A2 / GM-A2
        phi_mw_pair: (phi+, phi-) of the readout fields on G0-GP / G0-GM
        delay_ns: free evolution between pumping and readout

    The readout MW pair lasts tau = pi/(sqrt(2) Omega) and ends with a G0
    population marker; with ``params.ey_readout`` an explicit G0-EY drive
    segment with an EY fluorescence window follows.
    """
    if delay_ns < 0:
        raise SequenceFormatError(f"delay_ns: must be >= 0, got {delay_ns}")
    phi_plus_opt, phi_minus_opt = phi_opt_pair
    phi_plus_mw, phi_minus_mw = phi_mw_pair
    tau = mw_pair_duration_ns(params.rabi_mw_mhz)

    segments = [
        _reset(),
        mw_pulse("G0-GM", 0.0, math.pi, params.rabi_mw_mhz),
        PulseSegment(
            params.pumping_ns,
            optical_pair(params.rabi_opt_mhz, phi_plus_opt, phi_minus_opt),
            None,
            "optical_pumping",
        ),
        PulseSegment(delay_ns, (), None, "delay"),
    ]
    if params.ey_readout:
        segments.append(PulseSegment(tau, mw_pair(params.rabi_mw_mhz, phi_plus_mw, phi_minus_mw), None, "mw_readout"))
        segments.append(
            PulseSegment(
                params.window_ns,
                (DriveField.on("G0-EY", params.ey_rabi_mhz),),
                ReadoutMarker("EY", 0.0, params.window_ns),
                "ey_readout",
            )
        )
    else:
        segments.append(
            PulseSegment(
                tau,
                mw_pair(params.rabi_mw_mhz, phi_plus_mw, phi_minus_mw),
                ReadoutMarker("G0", tau, 0.0),
                "mw_readout",
            )
        )
    return Sequence("opt_to_mw", tuple(segments), "G0")


def seq_optical_pumping(
    initial_level: str,
    raman_mhz: float,
    duration_ns: float,
    params: ProtocolParams = ProtocolParams(),
    phi_opt_pair: Tuple[float, float] = (0.0, 0.0),
) -> Sequence:
    """Reset to ``initial_level`` then drive the Lambda pair ``raman_mhz`` off two-photon resonance."""
    phi_plus, phi_minus = phi_opt_pair
    optical = PulseSegment(
        duration_ns,
        optical_pair(params.rabi_opt_mhz, phi_plus, phi_minus, raman_mhz),
        ReadoutMarker("A2", 0.0, duration_ns),
        "optical_pumping",
    )
    return Sequence("optical_pumping", (_reset(), optical), initial_level)


# --- JSON format -----------------------------------------------------------

def _field_to_dict(item: DriveField) -> Dict[str, Any]:
    return {
        "transition": item.name,
        "rabi_mhz": item.rabi_mhz,
        "detuning_mhz": item.detuning_mhz,
        "phase_rad": item.phase_rad,
    }


def sequence_to_dict(seq: Sequence) -> Dict[str, Any]:
    segments = []
    for segment in seq.segments:
        entry: Dict[str, Any] = {
            "duration_ns": segment.duration_ns,
            "label": segment.label,
            "fields": [_field_to_dict(item) for item in segment.fields],
        }
        if segment.readout is not None:
            entry["readout"] = {
                "level": segment.readout.level,
                "t0_offset_ns": segment.readout.t0_offset_ns,
                "window_ns": segment.readout.window_ns,
            }
        segments.append(entry)
    return {
        "schema": SEQUENCE_SCHEMA,
        "name": seq.name,
        "initial_level": seq.initial_level,
        "segments": segments,
    }


def serialize_sequence(seq: Sequence) -> str:
    return json.dumps(sequence_to_dict(seq), indent=2)


def _require(mapping: Dict[str, Any], key: str, where: str):
    if key not in mapping:
        raise SequenceFormatError(f"{where}: missing field '{key}'")
    return mapping[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SequenceFormatError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _parse_field(raw: Any, where: str) -> DriveField:
    if not isinstance(raw, dict):
        raise SequenceFormatError(f"{where}: expected an object")
    name = _require(raw, "transition", where)
    if name not in TRANSITION_NAMES:
        raise SequenceFormatError(
            f"{where}: unknown transition {name!r}; allowed: {', '.join(TRANSITION_NAMES)}"
        )
    try:
        return DriveField.on(
            name,
            _number(_require(raw, "rabi_mhz", where), f"{where}.rabi_mhz"),
            _number(raw.get("detuning_mhz", 0.0), f"{where}.detuning_mhz"),
            _number(raw.get("phase_rad", 0.0), f"{where}.phase_rad"),
        )
    except DriveConfigError as exc:
        raise SequenceFormatError(f"{where}: {exc}") from None


def _parse_segment(raw: Any, index: int) -> PulseSegment:
    where = f"segment {index}"
    if not isinstance(raw, dict):
        raise SequenceFormatError(f"{where}: expected an object")
    duration = _number(_require(raw, "duration_ns", where), f"{where}.duration_ns")
    raw_fields = raw.get("fields", [])
    if not isinstance(raw_fields, list):
        raise SequenceFormatError(f"{where}.fields: expected a list")
    fields = tuple(_parse_field(item, f"{where} field {j}") for j, item in enumerate(raw_fields))
    marker = raw.get("readout")
    if marker is not None and not isinstance(marker, dict):
        raise SequenceFormatError(f"{where}.readout: expected an object")
    try:
        readout = None
        if marker is not None:
            readout = ReadoutMarker(
                str(_require(marker, "level", f"{where}.readout")),
                _number(marker.get("t0_offset_ns", 0.0), f"{where}.readout.t0_offset_ns"),
                _number(marker.get("window_ns", READOUT_WINDOW_NS), f"{where}.readout.window_ns"),
            )
        return PulseSegment(duration, fields, readout, str(raw.get("label", "")))
    except SequenceFormatError as exc:
        raise SequenceFormatError(f"{where}: {exc}") from None


def parse_sequence_file(text: str) -> Sequence:
    """
    Parse the JSON sequence format.

    Raises:
        SequenceFormatError: JSON syntax errors (with line and column) or
            schema violations naming the segment and field
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SequenceFormatError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise SequenceFormatError("sequence file: top level must be an object")
    schema = raw.get("schema")
    if schema != SEQUENCE_SCHEMA:
        raise SequenceFormatError(f"schema: expected {SEQUENCE_SCHEMA}, got {schema!r}")
    segments = _require(raw, "segments", "sequence")
    if not isinstance(segments, list):
        raise SequenceFormatError("segments: expected a list")
    parsed = tuple(_parse_segment(item, index) for index, item in enumerate(segments))
    seq = Sequence(
        str(_require(raw, "name", "sequence")),
        parsed,
        str(raw.get("initial_level", "G0")),
    )
    logger.info("[SEQUENCE] Parsed '%s' with %d segments", seq.name, len(seq.segments))
    return seq

"""Experiment configuration.

Single source of truth for every knob the experiments read: physics
constants, decoherence rates, detector and integrator settings, and the sweep
grids of each experiment. A JSON file (``"schema": 1``) only needs to name
what differs from the defaults; anything missing is filled from
``sim_defaults``. Unknown keys are rejected with their dotted path so typos
never silently fall back to a default.

Kept free of simulation imports beyond the parameter dataclasses so the CLI
can load and echo a config without running anything.
"""

from dataclasses import MISSING, dataclass, field, fields, is_dataclass, replace
from enum import Enum
from typing import Any, Dict, Iterable, Optional, Tuple
import json
import logging
import math

from dissipation import DecoherenceParams
from drive_hamiltonian import HYPERFINE_SELECTIVITY, DriveConfigError, nuclear_manifolds
from fluorescence_analysis import DetectorModel
from master_equation import IntegratorConfig
from sim_defaults import (
    CONFIG_SCHEMA,
    HYPERFINE_MHZ,
    MIXING_TIME_NS,
    MW_RABI_MHZ,
    OPTICAL_RABI_MHZ,
    PUMPING_TIME_NS,
    RAMAN_OFFSET_MHZ,
    READOUT_WINDOW_NS,
)

logger = logging.getLogger(__name__)

READOUT_MODES = ("population", "ey_drive")

# keys that exist on the dataclasses but are driven by the top-level seed
_SEEDED = {DecoherenceParams: ("seed",), DetectorModel: ("seed",)}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the dotted key."""


def _positive(value, name: str) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name}: expected numeric value, got {value!r}") from exc
    if not math.isfinite(number) or number <= 0:
        raise ValueError(f"{name}: must be > 0, got {value!r}")
    return number


def _count(value, name: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name}: expected an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name}: must be >= {minimum}, got {value}")
    return value


@dataclass(frozen=True)
class PhysicsConfig:
    rabi_mw_mhz: float = MW_RABI_MHZ
    rabi_opt_mhz: float = OPTICAL_RABI_MHZ
    hyperfine_mhz: float = HYPERFINE_MHZ
    decoherence: DecoherenceParams = field(default_factory=DecoherenceParams)
    hyperfine_selectivity: str = "ideal"
    nuclear_weights: Tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        object.__setattr__(self, "rabi_mw_mhz", _positive(self.rabi_mw_mhz, "rabi_mw_mhz"))
        object.__setattr__(self, "rabi_opt_mhz", _positive(self.rabi_opt_mhz, "rabi_opt_mhz"))
        if self.hyperfine_selectivity not in HYPERFINE_SELECTIVITY:
            raise ValueError(
                f"hyperfine_selectivity: must be one of {', '.join(HYPERFINE_SELECTIVITY)}, "
                f"got {self.hyperfine_selectivity!r}"
            )
        try:
            nuclear_manifolds(self.nuclear_weights)
        except (DriveConfigError, TypeError) as exc:
            raise ValueError(f"nuclear_weights: {exc}") from None
        object.__setattr__(self, "nuclear_weights", tuple(float(w) for w in self.nuclear_weights))


@dataclass(frozen=True)
class Mw2OptSweep:
    phase_points: int = 24
    theta_rad: float = 0.0  # phi+_mw - phi-_mw written into the spin
    optical_readout_ns: float = 200.0
    window_ns: float = READOUT_WINDOW_NS
    window_t0_max_ns: float = 168.0  # last sliding-window start

    def __post_init__(self):
        _count(self.phase_points, "phase_points", 8)
        _positive(self.optical_readout_ns, "optical_readout_ns")
        _positive(self.window_ns, "window_ns")
        if self.window_t0_max_ns < 0 or self.window_t0_max_ns + self.window_ns > self.optical_readout_ns:
            raise ValueError(
                f"window_t0_max_ns: windows must end inside the {self.optical_readout_ns} ns readout"
            )


@dataclass(frozen=True)
class CptSweep:
    detuning_min_mhz: float = -15.0
    detuning_max_mhz: float = 15.0
    points: int = 61
    pulse_ns: float = 1000.0
    initial_level: str = "GM"
    rabi_scan_mhz: Tuple[float, ...] = (10.0, 20.0, 27.0, 40.0)

    def __post_init__(self):
        _count(self.points, "points", 9)
        if self.detuning_max_mhz <= self.detuning_min_mhz:
            raise ValueError("detuning_max_mhz: must exceed detuning_min_mhz")
        _positive(self.pulse_ns, "pulse_ns")
        object.__setattr__(
            self, "rabi_scan_mhz", tuple(_positive(v, "rabi_scan_mhz") for v in self.rabi_scan_mhz)
        )


@dataclass(frozen=True)
class PumpingSweep:
    raman_offset_mhz: float = RAMAN_OFFSET_MHZ
    on_duration_ns: float = 20.0 * PUMPING_TIME_NS
    off_duration_ns: float = 5.0 * MIXING_TIME_NS
    double_fit_start_ns: float = 30.0  # after the optical Rabi transient
    initial_level: str = "GM"

    def __post_init__(self):
        for name in ("on_duration_ns", "off_duration_ns"):
            _positive(getattr(self, name), name)
        if self.double_fit_start_ns < 0:
            raise ValueError(f"double_fit_start_ns: must be >= 0, got {self.double_fit_start_ns}")


@dataclass(frozen=True)
class Opt2MwSweep:
    phase_points: int = 24
    phi_opt_rad: float = 0.0  # phi+_opt - phi-_opt of the pumping pair
    fringe_delay_ns: float = 0.0
    delay_min_ns: float = 0.0
    delay_max_ns: float = 1500.0
    delay_points: int = 13
    pumping_ns: float = 500.0
    readout_mode: str = "population"

    def __post_init__(self):
        _count(self.phase_points, "phase_points", 8)
        _count(self.delay_points, "delay_points", 3)
        if self.delay_min_ns < 0 or self.delay_max_ns <= self.delay_min_ns:
            raise ValueError("delay_max_ns: need 0 <= delay_min_ns < delay_max_ns")
        if self.fringe_delay_ns < 0:
            raise ValueError(f"fringe_delay_ns: must be >= 0, got {self.fringe_delay_ns}")
        _positive(self.pumping_ns, "pumping_ns")
        if self.readout_mode not in READOUT_MODES:
            raise ValueError(
                f"readout_mode: must be one of {', '.join(READOUT_MODES)}, got {self.readout_mode!r}"
            )


@dataclass(frozen=True)
class SweepConfig:
    mw2opt: Mw2OptSweep = field(default_factory=Mw2OptSweep)
    cpt: CptSweep = field(default_factory=CptSweep)
    pumping: PumpingSweep = field(default_factory=PumpingSweep)
    opt2mw: Opt2MwSweep = field(default_factory=Opt2MwSweep)


@dataclass(frozen=True)
class ExperimentConfig:
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    detector: DetectorModel = field(default_factory=DetectorModel)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    hyperfine_average: bool = True
    workers: int = 4
    seed: int = 0

    def __post_init__(self):
        _count(self.workers, "workers", 1)
        _count(self.seed, "seed", 0)
        if not isinstance(self.hyperfine_average, bool):
            raise ValueError(f"hyperfine_average: expected true/false, got {self.hyperfine_average!r}")
        # one seed drives every random stream
        if self.physics.decoherence.seed != self.seed:
            physics = replace(self.physics, decoherence=replace(self.physics.decoherence, seed=self.seed))
            object.__setattr__(self, "physics", physics)
        if self.detector.seed != self.seed:
            object.__setattr__(self, "detector", replace(self.detector, seed=self.seed))

    @property
    def decoherence(self) -> DecoherenceParams:
        return self.physics.decoherence


def _default_of(item) -> Any:
    if item.default is not MISSING:
        return item.default
    if item.default_factory is not MISSING:
        return item.default_factory()
    return MISSING


def _coerce(value):
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    return value


def _build(cls, raw: Dict[str, Any], prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected an object, got {raw!r}")
    hidden = _SEEDED.get(cls, ())
    known = {item.name: item for item in fields(cls) if item.name not in hidden}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}: unknown key")

    kwargs = {}
    for name, value in raw.items():
        default = _default_of(known[name])
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{prefix}{exc}") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_overrides(raw: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply ``dotted.key=value`` overrides; values are JSON literals or plain strings."""
    for item in overrides or ():
        key, sep, text = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override {item!r}: expected dotted.key=value")
        parts = key.split(".")
        node = raw
        for index, part in enumerate(parts[:-1]):
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"{'.'.join(parts[:index + 1])}: is not a section")
            node = child
        node[parts[-1]] = _parse_value(text.strip())
    return raw


def config_from_dict(raw: Dict[str, Any], overrides: Iterable[str] = ()) -> ExperimentConfig:
    raw = dict(raw)
    schema = raw.pop("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"schema: expected {CONFIG_SCHEMA}, got {schema!r}")
    raw = apply_overrides(raw, overrides)
    return _build(ExperimentConfig, raw, "")


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """
    Load a JSON config and fill in defaults.

    Args:
        path: JSON file; None means all defaults
        overrides: ``dotted.key=value`` strings applied after the file

    Raises:
        ConfigError: unreadable file, JSON syntax error (with line/column),
            unknown key or invalid value (with the dotted key)
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                text = handle.read()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be an object")
    cfg = config_from_dict(raw, overrides)
    logger.info("[CONFIG] Loaded %s (seed=%d)", path or "defaults", cfg.seed)
    return cfg


def _plain(value):
    if is_dataclass(value):
        hidden = _SEEDED.get(type(value), ())
        return {
            item.name: _plain(getattr(value, item.name))
            for item in fields(value)
            if item.name not in hidden
        }
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Full effective config, loadable again by config_from_dict."""
    return {"schema": CONFIG_SCHEMA, **_plain(cfg)}


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, seed=int(seed))

"""
Drive Fields and Rotating-Frame Hamiltonians

Builds the RWA Hamiltonian (rad/ns) for any set of microwave and optical
fields acting on the NV level scheme.

Key Features:
- Allowed-transition table (MW: G0-GM, G0-GP; optical: GM-A2, GP-A2, G0-EY)
- Multi-rotating frame assigned by walking the field graph
- Hyperfine manifold offsets on the MW detunings
- Static differential spin detuning for inhomogeneous dephasing ensembles
- Raman detuning of a Lambda pair, MW dark/bright states

Field phase convention: each field contributes (Omega/2) e^{i phi} |s><p| + h.c.
where s is the spin-sublevel end of the transition (GM or GP, or G0 for the
G0-EY line) and p its partner. For MW lines this is |upper><lower|; for the
optical Lambda lines it makes a pair with phases (phi+, phi-) annihilate
dark_state(phi+ - phi-), the same form the MW pair has for mw_dark_state.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from nv_levels import NV_SCHEME, LevelScheme, PureState, bright_state, dark_state
from sim_defaults import HYPERFINE_MHZ, mhz_to_rad_per_ns

logger = logging.getLogger(__name__)


class DriveConfigError(ValueError):
    """Raised for disallowed, duplicated or inconsistent drive fields."""


# name -> (lower, upper, kind, spin end)
TRANSITIONS: Dict[str, Tuple[str, str, str, str]] = {
    "G0-GM": ("G0", "GM", "mw", "GM"),
    "G0-GP": ("G0", "GP", "mw", "GP"),
    "GM-A2": ("GM", "A2", "optical", "GM"),
    "GP-A2": ("GP", "A2", "optical", "GP"),
    "G0-EY": ("G0", "EY", "optical", "G0"),
}

TRANSITION_NAMES = tuple(TRANSITIONS)
MW_TRANSITIONS = frozenset(name for name, spec in TRANSITIONS.items() if spec[2] == "mw")
OPTICAL_TRANSITIONS = frozenset(TRANSITIONS) - MW_TRANSITIONS

HYPERFINE_SELECTIVITY = ("detuned", "ideal")

FRAME_LOOP_TOL = 1e-9  # rad/ns


def _to_float(value, name: str) -> float:
    try:
        result = float(value)
    except (TypeError, ValueError) as exc:
        raise DriveConfigError(f"{name}: expected numeric value, got {value!r}") from exc
    if not math.isfinite(result):
        raise DriveConfigError(f"{name}: must be finite, got {result!r}")
    return result


def transition_name(transition) -> str:
    """Normalize 'G0-GM' or ('G0', 'GM') to the table name."""
    if isinstance(transition, str):
        name = transition
    else:
        try:
            lower, upper = transition
        except (TypeError, ValueError):
            raise DriveConfigError(f"transition: expected a level pair, got {transition!r}") from None
        name = f"{lower}-{upper}"
    if name not in TRANSITIONS:
        raise DriveConfigError(
            f"transition: {name!r} is not allowed; allowed: {', '.join(TRANSITION_NAMES)}"
        )
    return name


@dataclass(frozen=True)
class DriveField:
    """One classical field: transition (lower, upper), cyclic Rabi and detuning in MHz, phase in rad."""

    transition: Tuple[str, str]
    rabi_mhz: float
    detuning_mhz: float = 0.0
    phase_rad: float = 0.0

    def __post_init__(self):
        name = transition_name(self.transition)
        lower, upper = TRANSITIONS[name][:2]
        object.__setattr__(self, "transition", (lower, upper))
        rabi = _to_float(self.rabi_mhz, "rabi_mhz")
        if rabi < 0:
            raise DriveConfigError(f"rabi_mhz: must be >= 0, got {rabi}")
        object.__setattr__(self, "rabi_mhz", rabi)
        object.__setattr__(self, "detuning_mhz", _to_float(self.detuning_mhz, "detuning_mhz"))
        object.__setattr__(self, "phase_rad", _to_float(self.phase_rad, "phase_rad"))

    @classmethod
    def on(cls, name: str, rabi_mhz: float, detuning_mhz: float = 0.0, phase_rad: float = 0.0) -> "DriveField":
        lower, upper = TRANSITIONS[transition_name(name)][:2]
        return cls((lower, upper), rabi_mhz, detuning_mhz, phase_rad)

    @property
    def name(self) -> str:
        return f"{self.transition[0]}-{self.transition[1]}"

    @property
    def is_microwave(self) -> bool:
        return self.name in MW_TRANSITIONS

    @property
    def spin_end(self) -> str:
        return TRANSITIONS[self.name][3]

    @property
    def rabi_rad_per_ns(self) -> float:
        return mhz_to_rad_per_ns(self.rabi_mhz)


@dataclass(frozen=True)
class NuclearLabel:
    """Classical 14N spin projection with its ensemble weight."""

    m_i: int = 0
    weight: float = 1.0 / 3.0

    def __post_init__(self):
        if self.m_i not in (-1, 0, 1):
            raise DriveConfigError(f"m_i: must be -1, 0 or +1, got {self.m_i!r}")
        weight = _to_float(self.weight, "weight")
        if not 0.0 <= weight <= 1.0:
            raise DriveConfigError(f"weight: must lie in [0, 1], got {weight}")
        object.__setattr__(self, "weight", weight)


def nuclear_manifolds(weights: Sequence[float] = (1 / 3, 1 / 3, 1 / 3)) -> Tuple[NuclearLabel, ...]:
    """The three manifolds m_I = -1, 0, +1 with weights summing to 1."""
    weights = [float(w) for w in weights]
    if len(weights) != 3:
        raise DriveConfigError(f"nuclear weights: expected 3 values, got {len(weights)}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise DriveConfigError(f"nuclear weights: must sum to 1, got {sum(weights)}")
    return tuple(NuclearLabel(m_i, w) for m_i, w in zip((-1, 0, 1), weights))


@dataclass(frozen=True)
class HamiltonianSpec:
    fields: Tuple[DriveField, ...] = ()
    hyperfine_mhz: float = HYPERFINE_MHZ
    nuclear: NuclearLabel = field(default_factory=lambda: NuclearLabel(0, 1.0))
    spin_detuning_mhz: float = 0.0
    hyperfine_selectivity: str = "detuned"

    def __post_init__(self):
        fields = tuple(self.fields)
        for item in fields:
            if not isinstance(item, DriveField):
                raise DriveConfigError(f"fields: expected DriveField, got {type(item).__name__}")
        names = [item.name for item in fields]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise DriveConfigError(f"fields: duplicate transition {', '.join(duplicates)}")
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "hyperfine_mhz", _to_float(self.hyperfine_mhz, "hyperfine_mhz"))
        object.__setattr__(
            self, "spin_detuning_mhz", _to_float(self.spin_detuning_mhz, "spin_detuning_mhz")
        )
        if self.hyperfine_selectivity not in HYPERFINE_SELECTIVITY:
            raise DriveConfigError(
                f"hyperfine_selectivity: must be one of {', '.join(HYPERFINE_SELECTIVITY)}, "
                f"got {self.hyperfine_selectivity!r}"
            )

    def effective_fields(self) -> List[Tuple[DriveField, float]]:
        """
        Fields with their manifold-corrected detunings (MHz).

        MW lines of manifold m_I are shifted by +m_I*A (G0-GM) and -m_I*A
        (G0-GP). With ideal selectivity the off-resonant manifolds see no MW
        drive at all.
        """
        m_i = self.nuclear.m_i
        result = []
        for item in self.fields:
            detuning = item.detuning_mhz
            if item.is_microwave and m_i != 0:
                if self.hyperfine_selectivity == "ideal":
                    continue
                sign = 1.0 if item.transition[1] == "GM" else -1.0
                detuning += sign * m_i * self.hyperfine_mhz
            result.append((item, detuning))
        return result


def _frame_energies(
    fields: List[Tuple[DriveField, float]], scheme: LevelScheme
) -> np.ndarray:
    # upper = lower - detuning along every field; BFS from the lowest-index level
    energies = np.zeros(scheme.dimension)
    adjacency: Dict[int, List[Tuple[int, float]]] = {}
    for item, detuning in fields:
        lower = scheme.index(item.transition[0])
        upper = scheme.index(item.transition[1])
        delta = mhz_to_rad_per_ns(detuning)
        adjacency.setdefault(lower, []).append((upper, -delta))
        adjacency.setdefault(upper, []).append((lower, delta))

    assigned: Dict[int, float] = {}
    for root in sorted(adjacency):
        if root in assigned:
            continue
        assigned[root] = 0.0
        queue = deque([root])
        while queue:
            node = queue.popleft()
            for neighbour, step in adjacency[node]:
                value = assigned[node] + step
                if neighbour not in assigned:
                    assigned[neighbour] = value
                    queue.append(neighbour)
                elif abs(assigned[neighbour] - value) > FRAME_LOOP_TOL:
                    raise DriveConfigError(
                        "fields: detunings around a closed loop are inconsistent; "
                        "no common rotating frame exists"
                    )
    for index, value in assigned.items():
        energies[index] = value
    return energies


def build_hamiltonian(spec: HamiltonianSpec, scheme: LevelScheme = NV_SCHEME) -> np.ndarray:
    """
    RWA Hamiltonian in the multi-rotating frame of the given fields.

    Args:
        spec: fields, hyperfine constant, nuclear manifold and static spin detuning
        scheme: level scheme (indices of the five levels)

    Returns:
        5x5 complex Hermitian matrix in rad/ns
    """
    dim = scheme.dimension
    h = np.zeros((dim, dim), dtype=complex)
    fields = spec.effective_fields()

    h += np.diag(_frame_energies(fields, scheme)).astype(complex)

    for item, _ in fields:
        lower, upper = item.transition
        spin = item.spin_end
        partner = upper if spin == lower else lower
        s = scheme.index(spin)
        p = scheme.index(partner)
        coupling = 0.5 * item.rabi_rad_per_ns * np.exp(1j * item.phase_rad)
        h[s, p] += coupling
        h[p, s] += np.conj(coupling)

    if spec.spin_detuning_mhz:
        half = 0.5 * mhz_to_rad_per_ns(spec.spin_detuning_mhz)
        h[scheme.index("GP"), scheme.index("GP")] += half
        h[scheme.index("GM"), scheme.index("GM")] -= half

    return h


def max_frequency(h: np.ndarray) -> float:
    """Largest Rabi frequency or frame energy magnitude in h (rad/ns)."""
    off_diagonal = h - np.diag(np.diag(h))
    rabi = 2.0 * float(np.max(np.abs(off_diagonal))) if off_diagonal.size else 0.0
    detuning = float(np.max(np.abs(np.diag(h)))) if h.size else 0.0
    return max(rabi, detuning)


def raman_detuning(field_a: DriveField, field_b: DriveField) -> float:
    """Two-photon detuning (MHz) of a Lambda pair sharing A2."""
    names = {field_a.name, field_b.name}
    if names != {"GM-A2", "GP-A2"}:
        raise DriveConfigError(
            f"raman_detuning needs the GM-A2/GP-A2 pair, got {field_a.name} and {field_b.name}"
        )
    return field_a.detuning_mhz - field_b.detuning_mhz


def mw_dark_state(phi_mw: float) -> PureState:
    """GM/GP superposition annihilated by the equal-Rabi resonant MW pair with relative phase phi_mw."""
    return dark_state(phi_mw)


def mw_bright_state(phi_mw: float) -> PureState:
    """Orthogonal partner of mw_dark_state; the only GM/GP state the MW pair couples to G0."""
    return bright_state(phi_mw)


def optical_pair(
    rabi_mhz: float,
    phi_plus: float = 0.0,
    phi_minus: float = 0.0,
    raman_mhz: float = 0.0,
) -> Tuple[DriveField, DriveField]:
    """Lambda pair (GM-A2 carries the Raman detuning, GP-A2 is resonant)."""
    return (
        DriveField.on("GM-A2", rabi_mhz, raman_mhz, phi_minus),
        DriveField.on("GP-A2", rabi_mhz, 0.0, phi_plus),
    )


def mw_pair(
    rabi_mhz: float, phi_plus: float = 0.0, phi_minus: float = 0.0
) -> Tuple[DriveField, DriveField]:
    """Simultaneous resonant MW fields on G0-GM (phi_minus) and G0-GP (phi_plus)."""
    return (
        DriveField.on("G0-GM", rabi_mhz, 0.0, phi_minus),
        DriveField.on("G0-GP", rabi_mhz, 0.0, phi_plus),
    )


def check_fields(fields: Optional[Sequence[DriveField]]) -> Tuple[DriveField, ...]:
    """Validate a field list the way HamiltonianSpec does and return it as a tuple."""
    return HamiltonianSpec(fields=tuple(fields or ())).fields

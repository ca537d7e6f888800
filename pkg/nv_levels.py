"""
NV Level Scheme and Spin-State Algebra

Five-level description of the negatively charged NV center used by every
other module:

- G0 (ms=0), GM (ms=-1), GP (ms=+1): spin-triplet ground levels
- A2: excited level shared by the two optical Lambda transitions
- EY: excited level used as an ms=0 population readout

Key Features:
- Level scheme with stable indices and ground/excited predicates
- Pure and mixed state carriers with invariant checks
- Spin superposition, optical dark and bright states
- Dark/bright decomposition of arbitrary states

Phase convention: theta = arg(amplitude on GP) - arg(amplitude on GM).
"""

from dataclasses import dataclass
from typing import Dict, Tuple, Union
import logging

import numpy as np

logger = logging.getLogger(__name__)

LEVEL_LABELS = ("G0", "GM", "GP", "A2", "EY")
GROUND_LABELS = frozenset({"G0", "GM", "GP"})

NORM_TOL = 1e-12
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
EIGEN_TOL = -1e-9
INPUT_NORM_TOL = 1e-9


class UnknownLevelError(ValueError):
    """Raised when a level label is not part of the scheme."""


class InvalidStateError(ValueError):
    """Raised when a state violates normalization, Hermiticity or positivity."""


@dataclass(frozen=True)
class LevelScheme:
    levels: Tuple[str, ...] = LEVEL_LABELS

    def __post_init__(self):
        levels = tuple(str(label) for label in self.levels)
        if len(levels) != 5 or len(set(levels)) != 5:
            raise ValueError(f"levels: expected 5 distinct labels, got {levels!r}")
        object.__setattr__(self, "levels", levels)

    @property
    def dimension(self) -> int:
        return len(self.levels)

    @property
    def index_of(self) -> Dict[str, int]:
        return {label: index for index, label in enumerate(self.levels)}

    def index(self, label: str) -> int:
        try:
            return self.levels.index(label)
        except ValueError:
            raise UnknownLevelError(
                f"Unknown level {label!r}; expected one of {', '.join(self.levels)}"
            ) from None

    def is_ground(self, label: str) -> bool:
        self.index(label)
        return label in GROUND_LABELS

    def is_excited(self, label: str) -> bool:
        return not self.is_ground(label)


NV_SCHEME = LevelScheme()

IDX_G0 = NV_SCHEME.index("G0")
IDX_GM = NV_SCHEME.index("GM")
IDX_GP = NV_SCHEME.index("GP")
IDX_A2 = NV_SCHEME.index("A2")
IDX_EY = NV_SCHEME.index("EY")


def _canonical_phase(amplitudes: np.ndarray) -> np.ndarray:
    # first amplitude above tolerance made real-positive
    nonzero = np.flatnonzero(np.abs(amplitudes) > NORM_TOL)
    if nonzero.size == 0:
        return amplitudes
    lead = amplitudes[nonzero[0]]
    return amplitudes * (np.abs(lead) / lead)


class PureState:
    """
    Normalized amplitude vector over the five levels.

    The global phase is canonicalized on construction (first nonzero
    amplitude real-positive) so equal physical states compare equal.
    """

    __slots__ = ("_amplitudes",)

    def __init__(self, amplitudes):
        vector = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if vector.shape != (NV_SCHEME.dimension,):
            raise InvalidStateError(
                f"Expected {NV_SCHEME.dimension} amplitudes, got {vector.shape[0]}"
            )
        norm = np.linalg.norm(vector)
        if abs(norm - 1.0) > NORM_TOL:
            raise InvalidStateError(f"State norm is {norm:.15f}, expected 1")
        vector = _canonical_phase(vector)
        vector.setflags(write=False)
        self._amplitudes = vector

    @classmethod
    def normalized(cls, amplitudes) -> "PureState":
        vector = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(vector)
        if norm == 0.0:
            raise InvalidStateError("Cannot normalize the zero vector")
        return cls(vector / norm)

    @property
    def amplitudes(self) -> np.ndarray:
        return self._amplitudes

    def amplitude(self, label: str) -> complex:
        return complex(self._amplitudes[NV_SCHEME.index(label)])

    def overlap(self, other: "PureState") -> complex:
        """<self|other>."""
        return complex(np.vdot(self._amplitudes, other.amplitudes))

    def norm(self) -> float:
        return float(np.linalg.norm(self._amplitudes))

    def theta(self) -> float:
        """Relative phase arg(C_GP) - arg(C_GM), wrapped to (-pi, pi]."""
        c_plus = self._amplitudes[IDX_GP]
        c_minus = self._amplitudes[IDX_GM]
        if abs(c_plus) < NORM_TOL or abs(c_minus) < NORM_TOL:
            raise InvalidStateError("theta is undefined without both GM and GP weight")
        return float(np.angle(c_plus / c_minus))

    def to_density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self._amplitudes, self._amplitudes.conj()))

    def __eq__(self, other):
        if not isinstance(other, PureState):
            return NotImplemented
        return bool(np.allclose(self._amplitudes, other.amplitudes, rtol=0.0, atol=NORM_TOL))

    __hash__ = None

    def __repr__(self):
        terms = ", ".join(
            f"{label}={amp.real:+.4f}{amp.imag:+.4f}j"
            for label, amp in zip(NV_SCHEME.levels, self._amplitudes)
            if abs(amp) > NORM_TOL
        )
        return f"PureState({terms})"


class DensityMatrix:
    """5x5 density matrix; invariants are checked on construction."""

    __slots__ = ("_elements",)

    def __init__(self, elements, validate: bool = True):
        matrix = np.array(elements, dtype=complex)
        dim = NV_SCHEME.dimension
        if matrix.shape != (dim, dim):
            raise InvalidStateError(f"Expected a {dim}x{dim} matrix, got {matrix.shape}")
        matrix.setflags(write=False)
        self._elements = matrix
        if validate:
            self.validate()

    @property
    def elements(self) -> np.ndarray:
        return self._elements

    def validate(self) -> "DensityMatrix":
        matrix = self._elements
        asymmetry = float(np.max(np.abs(matrix - matrix.conj().T)))
        if asymmetry > HERMITIAN_TOL:
            raise InvalidStateError(f"Density matrix not Hermitian (deviation {asymmetry:.3e})")
        trace = complex(np.trace(matrix))
        if abs(trace - 1.0) > TRACE_TOL:
            raise InvalidStateError(f"Density matrix trace is {trace.real:.12f}, expected 1")
        min_eigenvalue = float(np.min(np.linalg.eigvalsh(matrix)))
        if min_eigenvalue < EIGEN_TOL:
            raise InvalidStateError(f"Density matrix has eigenvalue {min_eigenvalue:.3e} < 0")
        return self

    def population(self, label: str) -> float:
        index = NV_SCHEME.index(label)
        return float(self._elements[index, index].real)

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self._elements)).copy()

    def coherence(self, row: str, col: str) -> complex:
        return complex(self._elements[NV_SCHEME.index(row), NV_SCHEME.index(col)])

    def purity(self) -> float:
        return float(np.real(np.trace(self._elements @ self._elements)))

    def expectation(self, state: PureState) -> float:
        """<psi|rho|psi> for a pure state psi."""
        vector = state.amplitudes
        return float(np.real(np.vdot(vector, self._elements @ vector)))

    def __eq__(self, other):
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return bool(np.allclose(self._elements, other.elements, rtol=0.0, atol=HERMITIAN_TOL))

    __hash__ = None

    def __repr__(self):
        pops = ", ".join(f"{label}={p:.4f}" for label, p in zip(NV_SCHEME.levels, self.populations()))
        return f"DensityMatrix({pops})"


def pure_state(level: str) -> DensityMatrix:
    """Projector onto a single level."""
    index = NV_SCHEME.index(level)
    matrix = np.zeros((NV_SCHEME.dimension, NV_SCHEME.dimension), dtype=complex)
    matrix[index, index] = 1.0
    return DensityMatrix(matrix)


def basis_state(level: str) -> PureState:
    vector = np.zeros(NV_SCHEME.dimension, dtype=complex)
    vector[NV_SCHEME.index(level)] = 1.0
    return PureState(vector)


def _spin_vector(c_plus: complex, c_minus: complex) -> np.ndarray:
    vector = np.zeros(NV_SCHEME.dimension, dtype=complex)
    vector[IDX_GP] = c_plus
    vector[IDX_GM] = c_minus
    return vector


def spin_superposition(theta: float, c_plus: complex, c_minus: complex) -> PureState:
    """
    Ground-state superposition e^{i theta} C_+ |+1> + C_- |-1>.

    Args:
        theta: relative phase in radians
        c_plus: amplitude on GP before the phase factor
        c_minus: amplitude on GM

    Returns:
        Normalized PureState supported on {GM, GP}

    Raises:
        InvalidStateError: if |c_plus|^2 + |c_minus|^2 differs from 1
    """
    weight = abs(c_plus) ** 2 + abs(c_minus) ** 2
    if abs(weight - 1.0) > INPUT_NORM_TOL:
        raise InvalidStateError(
            f"Amplitudes are not normalized: |C+|^2 + |C-|^2 = {weight:.12f}"
        )
    vector = _spin_vector(np.exp(1j * theta) * c_plus, c_minus)
    return PureState(vector / np.linalg.norm(vector))


def dark_state(phi_opt: float) -> PureState:
    """(e^{i phi_opt}|+1> - |-1>)/sqrt(2), decoupled from a Raman-resonant field pair."""
    return PureState(_spin_vector(np.exp(1j * phi_opt), -1.0) / np.sqrt(2.0))


def bright_state(phi_opt: float) -> PureState:
    """(e^{i phi_opt}|+1> + |-1>)/sqrt(2), the orthogonal partner of dark_state."""
    return PureState(_spin_vector(np.exp(1j * phi_opt), 1.0) / np.sqrt(2.0))


def dark_bright_decompose(
    state: Union[PureState, DensityMatrix], phi_opt: float
) -> Tuple[float, float, float]:
    """
    Split a state into bright, dark and remaining populations.

    For the spin superposition with phase theta the bright weight is
    cos^2((theta - phi_opt)/2) and the dark weight sin^2((theta - phi_opt)/2).

    Returns:
        (p_bright, p_dark, p_rest)
    """
    if isinstance(state, PureState):
        rho = state.to_density()
    elif isinstance(state, DensityMatrix):
        rho = state
    else:
        raise InvalidStateError(f"Expected PureState or DensityMatrix, got {type(state).__name__}")

    p_bright = rho.expectation(bright_state(phi_opt))
    p_dark = rho.expectation(dark_state(phi_opt))
    p_rest = max(0.0, 1.0 - p_bright - p_dark)
    return p_bright, p_dark, p_rest

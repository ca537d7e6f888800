"""
Lindblad Master-Equation Propagator

Integrates d rho/dt = -i[H, rho] + sum_k (L_k rho L_k^+ - 1/2 {L_k^+ L_k, rho})
over piecewise-constant segments with a fixed-step classical RK4 scheme.

Key Features:
- Row-major 25x25 Liouvillian; one RK4 step is the degree-4 Taylor
  polynomial of dt*L, identical to the four-stage update for a linear ODE
- Step-size guard dt * Omega_max <= 0.1 rad
- Hermiticity re-symmetrization once per step, trace check per segment
- Static-Gaussian dephasing as an ensemble average over detuning samples,
  members optionally spread over a thread pool
- Matrix-exponential oracle on the superoperator (scipy expm)
- Trajectory CSV export
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple, Union
import csv
import logging
import math

import numpy as np
from scipy.linalg import expm

from drive_hamiltonian import HamiltonianSpec, NuclearLabel, build_hamiltonian, max_frequency
from dissipation import DecoherenceParams, DephasingModel, collapse_operators, static_detuning_samples
from nv_levels import NV_SCHEME, DensityMatrix, pure_state
from sim_defaults import DT_NS, HYPERFINE_MHZ, MAX_PHASE_STEP_RAD, RECORD_STRIDE, TRACE_TOL

logger = logging.getLogger(__name__)

DIM = NV_SCHEME.dimension
_ADJOINT = np.arange(DIM * DIM).reshape(DIM, DIM).T.ravel()
_IDENTITY = np.eye(DIM, dtype=complex)


class NumericalError(RuntimeError):
    """Base class for numerical failures (integration drift, fits, calibration)."""


class TraceDriftError(NumericalError):
    pass


class StepSizeError(NumericalError, ValueError):
    """The configured step is too coarse for the fastest frequency of a segment."""


@dataclass(frozen=True)
class IntegratorConfig:
    dt_ns: float = DT_NS
    trace_tol: float = TRACE_TOL
    record_stride: int = RECORD_STRIDE

    def __post_init__(self):
        try:
            dt = float(self.dt_ns)
            tol = float(self.trace_tol)
        except (TypeError, ValueError) as exc:
            raise ValueError("dt_ns/trace_tol: expected numeric values") from exc
        if not math.isfinite(dt) or dt <= 0:
            raise ValueError(f"dt_ns: must be > 0, got {self.dt_ns!r}")
        if not math.isfinite(tol) or tol <= 0:
            raise ValueError(f"trace_tol: must be > 0, got {self.trace_tol!r}")
        if isinstance(self.record_stride, bool) or int(self.record_stride) != self.record_stride:
            raise ValueError(f"record_stride: expected an integer, got {self.record_stride!r}")
        if self.record_stride < 1:
            raise ValueError(f"record_stride: must be >= 1, got {self.record_stride}")
        object.__setattr__(self, "dt_ns", dt)
        object.__setattr__(self, "trace_tol", tol)
        object.__setattr__(self, "record_stride", int(self.record_stride))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded states (N x 5 x 5) at strictly increasing times (ns)."""

    times: np.ndarray
    states: np.ndarray
    segment_marks: Tuple[int, ...] = ()
    record_stride: int = RECORD_STRIDE

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=complex)
        if states.shape != (times.size, DIM, DIM):
            raise ValueError(f"states: expected shape ({times.size}, {DIM}, {DIM}), got {states.shape}")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times: must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "segment_marks", tuple(int(m) for m in self.segment_marks))

    def __len__(self) -> int:
        return self.times.size

    def populations(self) -> np.ndarray:
        return np.real(np.einsum("tii->ti", self.states))

    def population(self, label: str) -> np.ndarray:
        index = NV_SCHEME.index(label)
        return np.real(self.states[:, index, index])

    def coherence(self, row: str, col: str) -> np.ndarray:
        return self.states[:, NV_SCHEME.index(row), NV_SCHEME.index(col)]

    def state(self, index: int) -> DensityMatrix:
        return DensityMatrix(self.states[index])

    def final_state(self) -> DensityMatrix:
        return self.state(-1)

    def segment_start(self, segment: int) -> float:
        return float(self.times[self.segment_marks[segment]])

    def traces(self) -> np.ndarray:
        return np.real(np.einsum("tii->t", self.states))

    def min_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.states)[:, 0]

    def purities(self) -> np.ndarray:
        return np.real(np.einsum("tij,tji->t", self.states, self.states))


def _check_dims(rho: np.ndarray, h: np.ndarray, collapses: Sequence[np.ndarray]):
    shapes = [rho.shape, h.shape] + [np.shape(op) for op in collapses]
    if any(shape != (DIM, DIM) for shape in shapes):
        raise ValueError(f"Dimension mismatch: expected {DIM}x{DIM} operators, got {shapes}")


def lindblad_rhs(rho, h: np.ndarray, collapses: Sequence[np.ndarray]) -> np.ndarray:
    """d rho/dt in 1/ns."""
    rho = rho.elements if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    h = np.asarray(h, dtype=complex)
    _check_dims(rho, h, collapses)
    drho = -1j * (h @ rho - rho @ h)
    for op in collapses:
        op_dag = op.conj().T
        rate = op_dag @ op
        drho += op @ rho @ op_dag - 0.5 * (rate @ rho + rho @ rate)
    return drho


def liouvillian(h: np.ndarray, collapses: Sequence[np.ndarray]) -> np.ndarray:
    """25x25 superoperator acting on row-major vec(rho): vec(A rho B) = (A kron B^T) vec(rho)."""
    h = np.asarray(h, dtype=complex)
    _check_dims(h, h, collapses)
    superop = -1j * (np.kron(h, _IDENTITY) - np.kron(_IDENTITY, h.T))
    for op in collapses:
        rate = op.conj().T @ op
        superop += np.kron(op, op.conj())
        superop -= 0.5 * (np.kron(rate, _IDENTITY) + np.kron(_IDENTITY, rate.T))
    return superop


def rk4_step_matrix(superop: np.ndarray, dt: float) -> np.ndarray:
    """I + dtL + (dtL)^2/2 + (dtL)^3/6 + (dtL)^4/24: the RK4 update of a linear system."""
    scaled = dt * superop
    step = np.eye(scaled.shape[0], dtype=complex)
    term = np.eye(scaled.shape[0], dtype=complex)
    for order in range(1, 5):
        term = term @ scaled / order
        step = step + term
    return step


def _hermitize(vec: np.ndarray) -> np.ndarray:
    return 0.5 * (vec + vec[_ADJOINT].conj())


def propagate_segment(
    rho,
    h: np.ndarray,
    collapses: Sequence[np.ndarray],
    duration_ns: float,
    cfg: IntegratorConfig = IntegratorConfig(),
    t_offset: float = 0.0,
    label: str = "segment",
) -> Trajectory:
    """
    Integrate one constant-H segment.

    Records every ``record_stride`` steps and always records the end point;
    the last partial step is shortened to land exactly on ``duration_ns``.

    Raises:
        StepSizeError: dt * Omega_max exceeds the guard
        TraceDriftError: |Tr rho - 1| exceeds trace_tol at the end of the segment
    """
    rho = rho.elements if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    h = np.asarray(h, dtype=complex)
    _check_dims(rho, h, collapses)
    if not math.isfinite(duration_ns) or duration_ns < 0:
        raise ValueError(f"duration_ns: must be >= 0, got {duration_ns!r}")

    dt = cfg.dt_ns
    phase_step = dt * max_frequency(h)
    if phase_step > MAX_PHASE_STEP_RAD:
        raise StepSizeError(
            f"Segment '{label}': dt*Omega_max = {phase_step:.3f} rad exceeds "
            f"{MAX_PHASE_STEP_RAD} (dt={dt} ns)"
        )

    n_steps = int(math.floor(duration_ns / dt))
    remainder = duration_ns - n_steps * dt
    if remainder <= 1e-9 * dt:
        remainder = 0.0

    times = [t_offset]
    states = [rho.copy()]
    vec = rho.reshape(-1).copy()

    if duration_ns > 0:
        superop = liouvillian(h, collapses)
        full_step = rk4_step_matrix(superop, dt) if n_steps else None
        stride = cfg.record_stride
        for step in range(1, n_steps + 1):
            vec = _hermitize(full_step @ vec)
            if step % stride == 0:
                times.append(t_offset + step * dt)
                states.append(vec.reshape(DIM, DIM).copy())
        if remainder > 0:
            vec = _hermitize(rk4_step_matrix(superop, remainder) @ vec)
        end_time = t_offset + duration_ns
        if times[-1] < end_time - 1e-9 * max(dt, 1.0):
            times.append(end_time)
            states.append(vec.reshape(DIM, DIM).copy())

    result = Trajectory(np.array(times), np.array(states), (0,), cfg.record_stride)
    drift = float(np.max(np.abs(result.traces() - 1.0)))
    if drift > cfg.trace_tol:
        raise TraceDriftError(f"Trace drift {drift:.3e} in segment '{label}' exceeds {cfg.trace_tol:.1e}")
    logger.debug(
        "[PROPAGATOR] %s: %.2f ns, %d steps, %d samples", label, duration_ns, n_steps, len(times)
    )
    return result


def expm_propagate(rho, h: np.ndarray, collapses: Sequence[np.ndarray], duration_ns: float) -> np.ndarray:
    """Reference solution exp(L t) vec(rho) by scaling-and-squaring on the superoperator."""
    rho = rho.elements if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    superop = liouvillian(h, collapses)
    return (expm(superop * duration_ns) @ rho.reshape(-1)).reshape(DIM, DIM)


def _concatenate(pieces: List[Trajectory], stride: int) -> Trajectory:
    times = [pieces[0].times[:1]]
    states = [pieces[0].states[:1]]
    marks = []
    count = 1
    for piece in pieces:
        marks.append(count - 1)
        times.append(piece.times[1:])
        states.append(piece.states[1:])
        count += piece.times.size - 1
    return Trajectory(np.concatenate(times), np.concatenate(states), tuple(marks), stride)


def _run_single(
    seq,
    rho0: np.ndarray,
    collapses: List[np.ndarray],
    cfg: IntegratorConfig,
    nuclear: NuclearLabel,
    hyperfine_mhz: float,
    hyperfine_selectivity: str,
    spin_detuning_mhz: float,
) -> Trajectory:
    pieces = []
    rho = rho0
    t_offset = 0.0
    for index, segment in enumerate(seq.segments):
        spec = HamiltonianSpec(
            fields=segment.fields,
            hyperfine_mhz=hyperfine_mhz,
            nuclear=nuclear,
            spin_detuning_mhz=spin_detuning_mhz,
            hyperfine_selectivity=hyperfine_selectivity,
        )
        h = build_hamiltonian(spec)
        label = f"{seq.name}[{index}:{segment.label or 'segment'}]"
        piece = propagate_segment(rho, h, collapses, segment.duration_ns, cfg, t_offset, label)
        pieces.append(piece)
        rho = piece.states[-1]
        t_offset += segment.duration_ns
    if not pieces:
        return Trajectory(np.array([0.0]), rho0[np.newaxis].copy(), (), cfg.record_stride)
    return _concatenate(pieces, cfg.record_stride)


def run_sequence(
    seq,
    initial: Optional[DensityMatrix] = None,
    params: DecoherenceParams = DecoherenceParams(),
    cfg: IntegratorConfig = IntegratorConfig(),
    nuclear: Optional[NuclearLabel] = None,
    hyperfine_mhz: float = HYPERFINE_MHZ,
    hyperfine_selectivity: str = "detuned",
    spin_detuning_mhz: float = 0.0,
    workers: int = 1,
) -> Trajectory:
    """
    Propagate a pulse sequence segment by segment.

    Args:
        seq: Sequence (pulse_sequences); its initial_level is the ideal reset
        initial: starting state, defaults to the projector on seq.initial_level
        params: decoherence rates and dephasing model
        cfg: integrator settings
        nuclear: 14N manifold for the MW hyperfine offsets (default m_I = 0)
        spin_detuning_mhz: extra static GM/GP differential detuning
        workers: threads for the static ensemble members (1 runs them in order)

    Returns:
        Trajectory with continuous state and one segment mark per segment.
        For the STATIC_GAUSSIAN model the states are the equal-weight average
        over the seeded detuning ensemble.
    """
    if isinstance(workers, bool) or int(workers) != workers or workers < 1:
        raise ValueError(f"workers: must be an integer >= 1, got {workers!r}")
    rho0 = (initial if initial is not None else pure_state(seq.initial_level)).elements
    nuclear = nuclear or NuclearLabel(0, 1.0)
    collapses = collapse_operators(params)

    def run(detuning: float) -> Trajectory:
        return _run_single(
            seq, rho0, collapses, cfg, nuclear, hyperfine_mhz, hyperfine_selectivity, detuning
        )

    if params.dephasing_model is not DephasingModel.STATIC_GAUSSIAN:
        return run(spin_detuning_mhz)

    samples = [spin_detuning_mhz + float(sample) for sample in static_detuning_samples(params)]
    if workers == 1:
        members = [run(sample) for sample in samples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(run, samples))
    # summed in sample order whatever the thread count
    total = members[0].states.copy()
    for member in members[1:]:
        total += member.states
    first = members[0]
    return Trajectory(first.times, total / len(samples), first.segment_marks, first.record_stride)


def trajectory_rows(traj: Trajectory) -> Iterable[List[str]]:
    populations = traj.populations()
    coherence = np.abs(traj.coherence("GM", "GP"))
    for t, pops, coh in zip(traj.times, populations, coherence):
        yield [repr(float(t))] + [repr(float(p)) for p in pops] + [repr(float(coh))]


def trajectory_to_csv(traj: Trajectory, target: Union[str, TextIO]) -> None:
    """Write t_ns, p_<level> for every level, then |rho_GM,GP|."""
    header = ["t_ns"] + [f"p_{label}" for label in NV_SCHEME.levels] + ["abs_rho_GM_GP"]
    if isinstance(target, str):
        with open(target, "w", newline="") as handle:
            trajectory_to_csv(traj, handle)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(trajectory_rows(traj))

"""
Invariant Suite

Machine-checkable properties of the simulator at small fixed sizes. Every
check reports its measured residual next to the threshold; failures and
numerical errors become report entries instead of exceptions.

Key Features:
- Unit anchoring (MW pi / pi-2 timing at 0.91 MHz)
- Dark states of the optical and MW field pairs, MW phase preparation
- Hamiltonian Hermiticity, linearity in disjoint fields, common-phase covariance
- Dark/bright weights that depend only on theta - phi_opt
- Trace, positivity and purity along a full transfer sequence
- RK4 vs matrix-exponential oracle, Liouvillian vs right-hand side
- Free decay vs the classical rate equations, dephasing that spares populations
- Static-Gaussian and Lindblad dephasing agree on the 1/e coherence time
- Step-halving convergence
- Fit exactness and equivariance, visibility scale invariance
- Pure sequence builders, MW -> optical sequence under 2 us
- Sequence JSON round trip, seeded determinism, 1/5 hyperfine cap
"""

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple
import logging
import math

import numpy as np
from scipy.linalg import expm

from drive_hamiltonian import (
    DriveField,
    HamiltonianSpec,
    NuclearLabel,
    build_hamiltonian,
    mw_bright_state,
    mw_dark_state,
    mw_pair,
    nuclear_manifolds,
    optical_pair,
)
from dissipation import DephasingModel, collapse_operators, rate_matrix, static_detuning_samples
from fluorescence_analysis import (
    DetectorModel,
    FringeData,
    fit_sinusoid,
    fluorescence_trace,
    visibility,
)
from master_equation import (
    IntegratorConfig,
    NumericalError,
    expm_propagate,
    lindblad_rhs,
    liouvillian,
    propagate_segment,
    run_sequence,
)
from nv_levels import (
    IDX_GM,
    IDX_GP,
    NV_SCHEME,
    DensityMatrix,
    bright_state,
    dark_bright_decompose,
    dark_state,
    pure_state,
    spin_superposition,
)
from pulse_sequences import (
    ProtocolParams,
    PulseSegment,
    Sequence,
    mw_pulse,
    parse_sequence_file,
    seq_mw_to_opt,
    seq_opt_to_mw,
    seq_optical_pumping,
    serialize_sequence,
)
from sim_config import ExperimentConfig

logger = logging.getLogger(__name__)

ORACLE_RABI_MHZ = 10.0
SHORT_READOUT_NS = 60.0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    residual: float
    threshold: float
    detail: str = ""


@dataclass
class InvariantReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def n_passed(self) -> int:
        return sum(1 for result in self.results if result.passed)

    @property
    def passed(self) -> bool:
        return self.n_passed == len(self.results)

    def failures(self) -> List[CheckResult]:
        return [result for result in self.results if not result.passed]

    def summary(self) -> str:
        return f"checks passed: {self.n_passed}/{len(self.results)}"

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {
                    "name": r.name,
                    "passed": r.passed,
                    "residual": r.residual,
                    "threshold": r.threshold,
                    "detail": r.detail,
                }
                for r in self.results
            ],
        }


def _wrap(angle: float) -> float:
    return float(np.angle(np.exp(1j * angle)))


def _short_protocol(cfg: ExperimentConfig) -> ProtocolParams:
    return ProtocolParams(
        rabi_mw_mhz=cfg.physics.rabi_mw_mhz,
        rabi_opt_mhz=cfg.physics.rabi_opt_mhz,
        optical_readout_ns=SHORT_READOUT_NS,
    )


def check_rabi_timing(cfg: ExperimentConfig) -> Tuple[float, float]:
    params = cfg.decoherence.without_decoherence()
    rabi = cfg.physics.rabi_mw_mhz
    full = run_sequence(
        Sequence("rabi_pi", (mw_pulse("G0-GM", 0.0, math.pi, rabi),)), params=params, cfg=cfg.integrator
    )
    half = run_sequence(
        Sequence("rabi_half_pi", (mw_pulse("G0-GM", 0.0, math.pi / 2, rabi),)), params=params, cfg=cfg.integrator
    )
    residual = max(1.0 - full.final_state().population("GM"), abs(half.final_state().population("GM") - 0.5))
    return residual, 1e-4


def check_optical_dark_state(cfg: ExperimentConfig) -> Tuple[float, float]:
    phi_plus, phi_minus = 1.1, 0.4
    h = build_hamiltonian(HamiltonianSpec(optical_pair(cfg.physics.rabi_opt_mhz, phi_plus, phi_minus)))
    return float(np.linalg.norm(h @ dark_state(phi_plus - phi_minus).amplitudes)), 1e-12


def check_mw_dark_state(cfg: ExperimentConfig) -> Tuple[float, float]:
    phi_plus, phi_minus = 2.3, -0.6
    h = build_hamiltonian(HamiltonianSpec(mw_pair(cfg.physics.rabi_mw_mhz, phi_plus, phi_minus)))
    dark = mw_dark_state(phi_plus - phi_minus)
    overlap = abs(dark.overlap(mw_bright_state(phi_plus - phi_minus)))
    return max(float(np.linalg.norm(h @ dark.amplitudes)), overlap), 1e-12


def check_mw_phase_preparation(cfg: ExperimentConfig) -> Tuple[float, float]:
    phi_plus, phi_minus = 0.9, -0.5
    rabi = cfg.physics.rabi_mw_mhz
    seq = Sequence(
        "mw_prepare",
        (mw_pulse("G0-GM", phi_minus, math.pi / 2, rabi), mw_pulse("G0-GP", phi_plus, math.pi, rabi)),
    )
    final = run_sequence(seq, params=cfg.decoherence.without_decoherence(), cfg=cfg.integrator).states[-1]
    theta = float(np.angle(final[IDX_GP, IDX_GM]))
    return abs(_wrap(theta - (phi_plus - phi_minus))), 1e-6


def check_dark_bright_weights(cfg: ExperimentConfig) -> Tuple[float, float]:
    residual = 0.0
    for theta, phi in ((0.3, 1.2), (2.0, -1.0), (math.pi, 0.0)):
        state = spin_superposition(theta, 1 / math.sqrt(2), 1 / math.sqrt(2))
        p_bright, p_dark, p_rest = dark_bright_decompose(state, phi)
        residual = max(
            residual,
            abs(p_bright - math.cos((theta - phi) / 2) ** 2),
            abs(p_dark - math.sin((theta - phi) / 2) ** 2),
            abs(p_rest),
        )
    return residual, 1e-12


def _transfer_trajectory(cfg: ExperimentConfig, integrator: Optional[IntegratorConfig] = None):
    seq = seq_mw_to_opt(0.7, 0.0, 0.0, 0.0, _short_protocol(cfg))
    return run_sequence(seq, params=cfg.decoherence, cfg=integrator or cfg.integrator)


def check_trace(cfg: ExperimentConfig) -> Tuple[float, float]:
    traj = _transfer_trajectory(cfg)
    return float(np.max(np.abs(traj.traces() - 1.0))), 1e-8


def check_positivity(cfg: ExperimentConfig) -> Tuple[float, float]:
    traj = _transfer_trajectory(cfg)
    return max(0.0, -float(np.min(traj.min_eigenvalues()))), 1e-9


def check_purity(cfg: ExperimentConfig) -> Tuple[float, float]:
    traj = _transfer_trajectory(cfg)
    return max(0.0, float(np.max(traj.purities())) - 1.0), 1e-7


def check_expm_oracle(cfg: ExperimentConfig) -> Tuple[float, float]:
    h = build_hamiltonian(HamiltonianSpec(optical_pair(ORACLE_RABI_MHZ, 0.8, 0.1, 1.0)))
    collapses = collapse_operators(cfg.decoherence)
    rho0 = pure_state("GM")
    duration = 50.0
    traj = propagate_segment(rho0, h, collapses, duration, cfg.integrator, label="oracle")
    reference = expm_propagate(rho0, h, collapses, duration)
    return float(np.max(np.abs(traj.states[-1] - reference))), 1e-7


def check_liouvillian(cfg: ExperimentConfig) -> Tuple[float, float]:
    h = build_hamiltonian(HamiltonianSpec(optical_pair(cfg.physics.rabi_opt_mhz, 0.5, 0.0, 2.0)))
    collapses = collapse_operators(cfg.decoherence)
    bright = dark_state(0.5 + math.pi).to_density().elements
    rho = 0.5 * bright + 0.3 * pure_state("G0").elements + 0.2 * pure_state("A2").elements
    via_superop = (liouvillian(h, collapses) @ rho.reshape(-1)).reshape(rho.shape)
    return float(np.max(np.abs(via_superop - lindblad_rhs(rho, h, collapses)))), 1e-12


def check_convergence(cfg: ExperimentConfig) -> Tuple[float, float]:
    coarse_cfg = cfg.integrator
    fine_cfg = replace(coarse_cfg, dt_ns=coarse_cfg.dt_ns / 2, record_stride=coarse_cfg.record_stride * 2)
    coarse = _transfer_trajectory(cfg, coarse_cfg)
    fine = _transfer_trajectory(cfg, fine_cfg)
    fine_pops = np.column_stack(
        [np.interp(coarse.times, fine.times, column) for column in fine.populations().T]
    )
    return float(np.max(np.abs(coarse.populations() - fine_pops))), 1e-6


def check_fringe_fit(cfg: ExperimentConfig) -> Tuple[float, float]:
    phases = 2 * math.pi * np.arange(16) / 16
    shift = 0.5
    base = fit_sinusoid(FringeData(phases, 2.0 + np.cos(phases - 0.3)))
    moved = fit_sinusoid(FringeData(phases + shift, 2.0 + np.cos(phases - 0.3)))
    residual = max(
        abs(base.visibility - 0.5),
        abs(_wrap(base.phase0 - 0.3)),
        abs(_wrap(moved.phase0 - base.phase0 - shift)),
        abs(moved.visibility - base.visibility),
        1.0 - base.r2,
    )
    return residual, 1e-10


def check_visibility_scale(cfg: ExperimentConfig) -> Tuple[float, float]:
    residual = 0.0
    for i_max, i_min in ((1.0, 0.2), (3.5, 3.0), (0.7, 0.0)):
        residual = max(residual, abs(visibility(7.3 * i_max, 7.3 * i_min) - visibility(i_max, i_min)))
    return residual, 1e-12


def check_fluorescence_linearity(cfg: ExperimentConfig) -> Tuple[float, float]:
    traj = _transfer_trajectory(cfg)
    start = traj.segment_start(3)
    full = fluorescence_trace(traj, "A2", cfg.decoherence.gamma_sp, DetectorModel(efficiency=1.0), t_begin=start)
    half = fluorescence_trace(traj, "A2", cfg.decoherence.gamma_sp, DetectorModel(efficiency=0.5), t_begin=start)
    return float(np.max(np.abs(0.5 * full.counts - half.counts))), 1e-12


def check_sequence_round_trip(cfg: ExperimentConfig) -> Tuple[float, float]:
    residual = 0.0
    for seq in (
        seq_mw_to_opt(0.4, 0.1, 1.0, 0.2, _short_protocol(cfg)),
        seq_opt_to_mw((0.3, 0.0), (1.3, 0.0), 120.0, _short_protocol(cfg)),
    ):
        residual = max(residual, 0.0 if parse_sequence_file(serialize_sequence(seq)) == seq else 1.0)
    return residual, 0.0


def check_seeded_determinism(cfg: ExperimentConfig) -> Tuple[float, float]:
    params = replace(cfg.decoherence, dephasing_model=DephasingModel.STATIC_GAUSSIAN)
    first = static_detuning_samples(params)
    second = static_detuning_samples(params)
    return float(np.max(np.abs(first - second))), 0.0


def check_hyperfine_cap(cfg: ExperimentConfig) -> Tuple[float, float]:
    params = cfg.decoherence.without_decoherence()
    protocol = ProtocolParams(rabi_mw_mhz=cfg.physics.rabi_mw_mhz, rabi_opt_mhz=cfg.physics.rabi_opt_mhz)
    signals = []
    for phi_mw in (0.0, math.pi):
        seq = seq_opt_to_mw((0.0, 0.0), (phi_mw, 0.0), 0.0, protocol)
        total = 0.0
        for nuclear in nuclear_manifolds():
            traj = run_sequence(
                seq,
                params=params,
                cfg=cfg.integrator,
                nuclear=nuclear,
                hyperfine_mhz=cfg.physics.hyperfine_mhz,
                hyperfine_selectivity="ideal",
            )
            total += nuclear.weight * traj.final_state().population("G0")
        signals.append(total)
    in_phase, antiphase = signals
    return abs(visibility(antiphase, in_phase) - 0.2), 0.005


def _mixed_specs(cfg: ExperimentConfig) -> Tuple[HamiltonianSpec, ...]:
    rabi_opt, rabi_mw = cfg.physics.rabi_opt_mhz, cfg.physics.rabi_mw_mhz
    return (
        HamiltonianSpec(optical_pair(rabi_opt, 1.1, -0.4, 3.0) + (DriveField.on("G0-EY", rabi_opt, -5.0, 0.7),)),
        HamiltonianSpec(mw_pair(rabi_mw, 2.3, 0.2), nuclear=NuclearLabel(1, 1.0), spin_detuning_mhz=0.8),
        HamiltonianSpec(mw_pair(rabi_mw, -0.9, 0.5), nuclear=NuclearLabel(-1, 1.0)),
        HamiltonianSpec(
            mw_pair(rabi_mw, 0.3, 1.7)
            + optical_pair(rabi_opt, 0.6, 2.2)
            + (DriveField.on("G0-EY", rabi_opt, 0.0, -1.2),)
        ),
    )


def check_hamiltonian_hermiticity(cfg: ExperimentConfig) -> Tuple[float, float]:
    residual = 0.0
    for spec in _mixed_specs(cfg):
        h = build_hamiltonian(spec)
        residual = max(residual, float(np.max(np.abs(h - h.conj().T))))
    return residual, 1e-12


def _phase_frame(level: str, delta: float) -> np.ndarray:
    frame = np.eye(NV_SCHEME.dimension, dtype=complex)
    frame[NV_SCHEME.index(level), NV_SCHEME.index(level)] = np.exp(-1j * delta)
    return frame


def check_phase_covariance(cfg: ExperimentConfig) -> Tuple[float, float]:
    # a common shift of a field pair is a phase rotation of the level the pair shares
    delta = 0.83
    collapses = collapse_operators(cfg.decoherence)
    rabi_opt, rabi_mw = cfg.physics.rabi_opt_mhz, cfg.physics.rabi_mw_mhz
    cases = (
        (
            optical_pair(rabi_opt, 1.1, 0.4, 2.0),
            optical_pair(rabi_opt, 1.1 + delta, 0.4 + delta, 2.0),
            "A2",
            60.0,
        ),
        (mw_pair(rabi_mw, 0.9, -0.5), mw_pair(rabi_mw, 0.9 + delta, -0.5 + delta), "G0", 300.0),
    )
    rho0 = 0.8 * bright_state(0.7).to_density().elements + 0.2 * pure_state("G0").elements
    residual = 0.0
    for fields, shifted, level, duration in cases:
        h = build_hamiltonian(HamiltonianSpec(fields))
        h_shifted = build_hamiltonian(HamiltonianSpec(shifted))
        frame = _phase_frame(level, delta)
        residual = max(residual, float(np.max(np.abs(h_shifted - frame @ h @ frame.conj().T))))

        final = DensityMatrix(expm_propagate(rho0, h, collapses, duration), validate=False)
        moved = DensityMatrix(expm_propagate(rho0, h_shifted, collapses, duration), validate=False)
        weights = np.array(dark_bright_decompose(final, 0.7)[:2])
        moved_weights = np.array(dark_bright_decompose(moved, 0.7)[:2])
        residual = max(
            residual,
            float(np.max(np.abs(weights - moved_weights))),
            float(np.max(np.abs(final.populations() - moved.populations()))),
        )
    return residual, 1e-12


def check_hamiltonian_linearity(cfg: ExperimentConfig) -> Tuple[float, float]:
    rabi_opt, rabi_mw = cfg.physics.rabi_opt_mhz, cfg.physics.rabi_mw_mhz
    cases = (
        (optical_pair(rabi_opt, 0.4, -1.0, 3.0), (DriveField.on("G0-EY", rabi_opt, -2.0, 0.5),)),
        (mw_pair(rabi_mw, 1.2, 0.3), optical_pair(rabi_opt, -0.7, 0.9)),
        (mw_pair(rabi_mw, 0.1, 2.0), (DriveField.on("G0-EY", rabi_opt, 0.0, 1.4),)),
    )
    residual = 0.0
    for first, second in cases:
        joint = build_hamiltonian(HamiltonianSpec(first + second))
        split = build_hamiltonian(HamiltonianSpec(first)) + build_hamiltonian(HamiltonianSpec(second))
        residual = max(residual, float(np.max(np.abs(joint - split))))
    return residual, 1e-12


def check_decomposition_shift(cfg: ExperimentConfig) -> Tuple[float, float]:
    residual = 0.0
    for theta, phi, delta in ((0.3, 1.2, 0.9), (2.0, -1.0, -2.4), (math.pi, 0.0, 5.1)):
        state = spin_superposition(theta, math.sqrt(0.3), math.sqrt(0.7))
        shifted = spin_superposition(theta + delta, math.sqrt(0.3), math.sqrt(0.7))
        for source, moved in ((state, shifted), (state.to_density(), shifted.to_density())):
            before = np.array(dark_bright_decompose(source, phi))
            after = np.array(dark_bright_decompose(moved, phi + delta))
            residual = max(residual, float(np.max(np.abs(before - after))))
    return residual, 1e-12


def check_dephasing_diagonal(cfg: ExperimentConfig) -> Tuple[float, float]:
    params = replace(
        cfg.decoherence, gamma_sp=0.0, gamma_mix=0.0, gamma_ey=0.0, dephasing_model=DephasingModel.LINDBLAD
    )
    h = build_hamiltonian(HamiltonianSpec(spin_detuning_mhz=1.5))
    rho0 = (
        0.7 * spin_superposition(0.8, math.sqrt(0.4), math.sqrt(0.6)).to_density().elements
        + 0.3 * pure_state("A2").elements
    )
    traj = propagate_segment(rho0, h, collapse_operators(params), 400.0, cfg.integrator, label="dephasing")
    drift = np.real(np.diagonal(traj.states, axis1=1, axis2=2)) - np.real(np.diag(rho0))
    return float(np.max(np.abs(drift))), 1e-10


def check_rate_equation_oracle(cfg: ExperimentConfig) -> Tuple[float, float]:
    params = replace(cfg.decoherence, dephasing_model=DephasingModel.LINDBLAD)
    populations = np.array([0.1, 0.2, 0.05, 0.4, 0.25])
    rho0 = np.diag(populations).astype(complex)
    h = np.zeros_like(rho0)
    collapses = collapse_operators(params)
    rates = rate_matrix(params)
    residual = 0.0
    for duration in (5.0, 40.0, 300.0):
        lindblad = np.real(np.diag(expm_propagate(rho0, h, collapses, duration)))
        classical = expm(rates * duration) @ populations
        residual = max(residual, float(np.max(np.abs(lindblad - classical))))
    return residual, 1e-8


def _coherence_1e_time(traj) -> float:
    coherence = np.abs(traj.coherence("GM", "GP"))
    target = coherence[0] / math.e
    below = np.nonzero(coherence <= target)[0]
    if not below.size:
        raise NumericalError("GM-GP coherence never falls to 1/e inside the window")
    k = int(below[0])
    return float(np.interp(target, coherence[[k, k - 1]], traj.times[[k, k - 1]]))


def check_static_vs_lindblad(cfg: ExperimentConfig) -> Tuple[float, float]:
    t2star_ns = 1000.0 * cfg.decoherence.t2star_us
    seq = Sequence("free_dephasing", (PulseSegment(3.0 * t2star_ns, (), None, "free"),), "GM")
    initial = dark_state(0.0).to_density()
    times = {}
    for model in (DephasingModel.LINDBLAD, DephasingModel.STATIC_GAUSSIAN):
        params = replace(cfg.decoherence, dephasing_model=model)
        traj = run_sequence(seq, initial=initial, params=params, cfg=cfg.integrator, workers=cfg.workers)
        times[model] = _coherence_1e_time(traj)
    lindblad, static = times[DephasingModel.LINDBLAD], times[DephasingModel.STATIC_GAUSSIAN]
    return abs(static - lindblad) / lindblad, 0.10


def check_builder_purity(cfg: ExperimentConfig) -> Tuple[float, float]:
    protocol = _short_protocol(cfg)
    builders = (
        lambda: seq_mw_to_opt(0.4, 0.1, 1.0, 0.2, protocol),
        lambda: seq_opt_to_mw((0.3, 0.0), (1.3, 0.0), 120.0, protocol),
        lambda: seq_optical_pumping("GM", 20.0, 300.0, protocol),
    )
    mismatches = sum(0 if build() == build() else 1 for build in builders)
    return float(mismatches), 0.0


def check_mw_to_opt_duration(cfg: ExperimentConfig) -> Tuple[float, float]:
    protocol = ProtocolParams(rabi_mw_mhz=cfg.physics.rabi_mw_mhz, rabi_opt_mhz=cfg.physics.rabi_opt_mhz)
    return seq_mw_to_opt(0.0, 0.0, 0.0, 0.0, protocol).total_duration_ns, 2000.0


CHECKS: List[Tuple[str, Callable[[ExperimentConfig], Tuple[float, float]]]] = [
    ("rabi_timing", check_rabi_timing),
    ("optical_dark_state", check_optical_dark_state),
    ("mw_dark_state", check_mw_dark_state),
    ("mw_phase_preparation", check_mw_phase_preparation),
    ("dark_bright_weights", check_dark_bright_weights),
    ("trace_preservation", check_trace),
    ("positivity", check_positivity),
    ("purity_bound", check_purity),
    ("expm_oracle", check_expm_oracle),
    ("liouvillian_vs_rhs", check_liouvillian),
    ("convergence_halving_dt", check_convergence),
    ("fringe_fit_equivariance", check_fringe_fit),
    ("visibility_scale_invariance", check_visibility_scale),
    ("fluorescence_linearity", check_fluorescence_linearity),
    ("sequence_json_round_trip", check_sequence_round_trip),
    ("seeded_determinism", check_seeded_determinism),
    ("hyperfine_visibility_cap", check_hyperfine_cap),
    ("hamiltonian_hermiticity", check_hamiltonian_hermiticity),
    ("phase_covariance", check_phase_covariance),
    ("hamiltonian_linearity", check_hamiltonian_linearity),
    ("decomposition_shift_invariance", check_decomposition_shift),
    ("dephasing_keeps_diagonal", check_dephasing_diagonal),
    ("rate_equation_oracle", check_rate_equation_oracle),
    ("static_vs_lindblad_1e", check_static_vs_lindblad),
    ("builder_purity", check_builder_purity),
    ("mw_to_opt_duration", check_mw_to_opt_duration),
]


def run_invariant_suite(cfg: Optional[ExperimentConfig] = None) -> InvariantReport:
    """
    Run every registered check.

    Returns:
        InvariantReport with one CheckResult per check, in registration order
    """
    cfg = cfg or ExperimentConfig()
    report = InvariantReport()
    for name, check in CHECKS:
        try:
            residual, threshold = check(cfg)
            passed = bool(residual <= threshold)
            detail = ""
        except (NumericalError, ValueError) as exc:
            # StepSizeError and TraceDriftError land here
            residual, threshold, passed = math.inf, math.nan, False
            detail = f"{type(exc).__name__}: {exc}"
        result = CheckResult(name, passed, float(residual), float(threshold), detail)
        report.results.append(result)
        level = logging.INFO if passed else logging.WARNING
        logger.log(level, "[CHECK] %s: %s (residual %.3e, threshold %.1e)",
                   name, "pass" if passed else "FAIL", residual, threshold)
    return report

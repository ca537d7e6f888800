"""
Rate Calibration

Fixes the two unknown decay rates from the measured pumping times: the A2
radiative rate from the Raman-resonant fluorescence decay (31 ns) and the
strain-mixing rate from the decay 20 MHz off Raman resonance (450 ns).

Key Features:
- Shared pumping-trace simulation (also used by the pumping experiment)
- Decay-time estimators with fixed fit windows [5 ns, 5 x target]
- Root finding on log(rate) inside documented brackets
- One fixed-point pass over both rates, returned as a config fragment
"""

from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple
import logging
import math

from scipy import optimize

from dissipation import DecoherenceParams
from fluorescence_analysis import FitError, TimeTrace, fit_exponential, fluorescence_trace
from master_equation import NumericalError, run_sequence
from pulse_sequences import ProtocolParams, seq_optical_pumping
from sim_config import ExperimentConfig
from sim_defaults import (
    CALIBRATION_SKIP_NS,
    CALIBRATION_SPAN_FACTOR,
    CONFIG_SCHEMA,
    MIXING_TIME_NS,
    PUMPING_TIME_NS,
)

logger = logging.getLogger(__name__)

GAMMA_SP_BRACKET = (0.02, 0.3)  # 1/ns
GAMMA_MIX_BRACKET = (1e-4, 0.1)  # 1/ns
LOG_RATE_XTOL = 1e-5


class CalibrationError(NumericalError, ValueError):
    """No rate inside the bracket reproduces the target decay time."""


@dataclass(frozen=True)
class CalibrationResult:
    gamma_sp: float
    gamma_mix: float
    tau_fast_ns: float
    tau_slow_ns: float

    def to_fragment(self) -> Dict[str, Any]:
        """Config fragment that can be merged into an experiment config."""
        return {
            "schema": CONFIG_SCHEMA,
            "physics": {"decoherence": {"gamma_sp": self.gamma_sp, "gamma_mix": self.gamma_mix}},
        }


def simulate_pumping_trace(
    cfg: ExperimentConfig,
    raman_mhz: float,
    duration_ns: float,
    params: Optional[DecoherenceParams] = None,
) -> TimeTrace:
    """
    A2 fluorescence of the Lambda pair applied to the configured initial level.

    Counts are the expected (noiseless) radiative emission; Poisson sampling
    is left to the caller.
    """
    params = params or cfg.decoherence
    pumping = cfg.sweep.pumping
    protocol = ProtocolParams(
        rabi_mw_mhz=cfg.physics.rabi_mw_mhz, rabi_opt_mhz=cfg.physics.rabi_opt_mhz
    )
    seq = seq_optical_pumping(pumping.initial_level, raman_mhz, duration_ns, protocol)
    traj = run_sequence(
        seq,
        params=params,
        cfg=cfg.integrator,
        hyperfine_mhz=cfg.physics.hyperfine_mhz,
        hyperfine_selectivity=cfg.physics.hyperfine_selectivity,
        workers=cfg.workers,
    )
    detector = replace(cfg.detector, poisson=False)
    return fluorescence_trace(traj, "A2", params.gamma_sp, detector, t_begin=traj.segment_start(1))


def _window(target_ns: float) -> Tuple[float, float]:
    return CALIBRATION_SKIP_NS, CALIBRATION_SPAN_FACTOR * target_ns


def pumping_time_ns(
    cfg: ExperimentConfig, params: DecoherenceParams, target_ns: float = PUMPING_TIME_NS
) -> float:
    """Raman-resonant decay time: single exponential with free offset over [5, 5 target] ns."""
    t_start, t_stop = _window(target_ns)
    trace = simulate_pumping_trace(cfg, 0.0, t_stop + cfg.detector.bin_ns, params)
    fit = fit_exponential(trace, 1, t_start, fit_offset=True, t_stop_ns=t_stop)
    return fit.taus[0]


def mixing_time_ns(
    cfg: ExperimentConfig, params: DecoherenceParams, target_ns: float = MIXING_TIME_NS
) -> float:
    """Off-Raman decay time: single exponential without offset over [5, 5 target] ns."""
    t_start, t_stop = _window(target_ns)
    raman = cfg.sweep.pumping.raman_offset_mhz
    trace = simulate_pumping_trace(cfg, raman, t_stop + cfg.detector.bin_ns, params)
    fit = fit_exponential(trace, 1, t_start, fit_offset=False, t_stop_ns=t_stop)
    return fit.taus[0]


def _solve(estimate, bracket: Tuple[float, float], target_ns: float, name: str) -> float:
    low, high = bracket

    def mismatch(log_rate: float) -> float:
        return estimate(math.exp(log_rate)) - target_ns

    try:
        f_low = mismatch(math.log(low))
        f_high = mismatch(math.log(high))
    except FitError as exc:
        raise CalibrationError(f"{name}: decay fit failed inside the bracket: {exc}") from exc
    if f_low * f_high > 0:
        raise CalibrationError(
            f"{name}: target {target_ns} ns not bracketed; decay time is "
            f"{f_low + target_ns:.2f} ns at {low} /ns and {f_high + target_ns:.2f} ns at {high} /ns"
        )
    log_rate = optimize.brentq(mismatch, math.log(low), math.log(high), xtol=LOG_RATE_XTOL)
    return math.exp(log_rate)


def calibrate_gamma_sp(
    cfg: ExperimentConfig,
    target_ns: float = PUMPING_TIME_NS,
    bracket: Tuple[float, float] = GAMMA_SP_BRACKET,
) -> float:
    """gamma_sp (1/ns) whose Raman-resonant pumping time equals target_ns; gamma_mix held fixed."""
    base = cfg.decoherence
    rate = _solve(
        lambda value: pumping_time_ns(cfg, replace(base, gamma_sp=value), target_ns),
        bracket,
        target_ns,
        "gamma_sp",
    )
    logger.info("[CALIBRATION] gamma_sp=%.5f /ns for a %.1f ns pumping time", rate, target_ns)
    return rate


def calibrate_gamma_mix(
    cfg: ExperimentConfig,
    target_ns: float = MIXING_TIME_NS,
    bracket: Tuple[float, float] = GAMMA_MIX_BRACKET,
) -> float:
    """gamma_mix (1/ns) whose off-Raman decay time equals target_ns; gamma_sp held fixed."""
    base = cfg.decoherence
    rate = _solve(
        lambda value: mixing_time_ns(cfg, replace(base, gamma_mix=value), target_ns),
        bracket,
        target_ns,
        "gamma_mix",
    )
    logger.info(
        "[CALIBRATION] gamma_mix=%.6f /ns for a %.1f ns decay %.0f MHz off Raman",
        rate,
        target_ns,
        cfg.sweep.pumping.raman_offset_mhz,
    )
    return rate


def apply_rates(cfg: ExperimentConfig, gamma_sp: float, gamma_mix: float) -> ExperimentConfig:
    decoherence = replace(cfg.decoherence, gamma_sp=gamma_sp, gamma_mix=gamma_mix)
    return replace(cfg, physics=replace(cfg.physics, decoherence=decoherence))


def apply_calibration(cfg: ExperimentConfig, result: CalibrationResult) -> ExperimentConfig:
    return apply_rates(cfg, result.gamma_sp, result.gamma_mix)


def calibrate_rates(
    cfg: ExperimentConfig,
    pumping_target_ns: float = PUMPING_TIME_NS,
    mixing_target_ns: float = MIXING_TIME_NS,
) -> CalibrationResult:
    """
    Calibrate both rates with one fixed-point pass (sp, mix, sp, mix).

    Each rate slightly changes the other's decay time, so the second round
    absorbs the coupling.
    """
    current = cfg
    for _ in range(2):
        gamma_sp = calibrate_gamma_sp(current, pumping_target_ns)
        current = apply_rates(current, gamma_sp, current.decoherence.gamma_mix)
        gamma_mix = calibrate_gamma_mix(current, mixing_target_ns)
        current = apply_rates(current, gamma_sp, gamma_mix)

    result = CalibrationResult(
        gamma_sp=gamma_sp,
        gamma_mix=gamma_mix,
        tau_fast_ns=pumping_time_ns(current, current.decoherence, pumping_target_ns),
        tau_slow_ns=mixing_time_ns(current, current.decoherence, mixing_target_ns),
    )
    logger.info(
        "[CALIBRATION] Done: gamma_sp=%.5f gamma_mix=%.6f (tau_fast=%.2f ns, tau_slow=%.1f ns)",
        result.gamma_sp,
        result.gamma_mix,
        result.tau_fast_ns,
        result.tau_slow_ns,
    )
    return result

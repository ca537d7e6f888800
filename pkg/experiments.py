"""
Phase-Transfer Experiments

Sweeps that reproduce the transfer measurements end to end: build the
sequences, propagate them, turn the states into detector signals and fit.

Key Features:
- MW -> optical transfer: fringe vs optical phase, max/min traces, visibility
  vs detection-window start
- CPT dip vs Raman detuning, optionally repeated for several optical Rabi
  frequencies
- Optical pumping traces on and off Raman resonance with decay fits
- Optical -> MW transfer: fringe vs MW phase and visibility vs storage delay
- 14N hyperfine averaging of the MW-driven experiments
- Result directories: result.json (config echo, fits, derived numbers) plus
  one CSV per table

Every experiment splits into a raw stage (simulation) and an analysis stage
registered in ANALYZERS, so fits and derived numbers can always be recomputed
from the saved raw tables.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import json
import logging
import math
import os

import numpy as np

from calibration import simulate_pumping_trace
from drive_hamiltonian import NuclearLabel, nuclear_manifolds
from fluorescence_analysis import (
    ExponentialFit,
    FitError,
    FringeData,
    TimeTrace,
    fit_decay,
    fit_exponential,
    fit_lorentzian_dip,
    fit_sinusoid,
    fit_visibility_decay,
    fluorescence_trace,
    r_squared,
    visibility,
    windowed_counts,
    write_table_csv,
)
from master_equation import Trajectory, run_sequence
from pulse_sequences import (
    ProtocolParams,
    Sequence as PulseSequence,
    seq_mw_to_opt,
    seq_opt_to_mw,
    seq_optical_pumping,
)
from sim_config import ExperimentConfig, config_to_dict
from sim_defaults import (
    CALIBRATION_SKIP_NS,
    CALIBRATION_SPAN_FACTOR,
    MIXING_TIME_NS,
    PUMPING_TIME_NS,
    RESULT_SCHEMA,
    STREAM_POISSON,
    derive_rng,
)

logger = logging.getLogger(__name__)

Table = Dict[str, np.ndarray]


class GridMismatchError(ValueError):
    """Manifold results cannot be averaged because their grids differ."""


@dataclass
class ExperimentResult:
    experiment: str
    raw: Dict[str, Table]
    fits: Dict[str, Any] = field(default_factory=dict)
    derived: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, Table] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)

    def save(self, out_dir: str) -> str:
        """
        Write result.json plus <table>.csv for every raw and derived table.

        Returns:
            Path of result.json
        """
        os.makedirs(out_dir, exist_ok=True)
        for name, table in list(self.raw.items()) + list(self.tables.items()):
            write_table_csv(os.path.join(out_dir, f"{name}.csv"), table)
        payload = {
            "schema": RESULT_SCHEMA,
            "experiment": self.experiment,
            "fits": {name: _fit_payload(fit) for name, fit in self.fits.items()},
            "derived": self.derived,
            "meta": self.meta,
            "config": self.config,
            "tables": sorted(list(self.raw) + list(self.tables)),
        }
        path = os.path.join(out_dir, "result.json")
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2)
            handle.write("\n")
        logger.info("[EXPERIMENT] Saved %s to %s", self.experiment, out_dir)
        return path


def _fit_payload(fit):
    if fit is None:
        return None
    if isinstance(fit, dict):
        return {key: _fit_payload(value) for key, value in fit.items()}
    return asdict(fit)


# --- shared helpers ----------------------------------------------------------

def _run_tasks(cfg: ExperimentConfig, tasks: Sequence[Callable[[], Any]]) -> List[Any]:
    """Run independent simulations; results come back in task order."""
    if cfg.workers == 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(lambda task: task(), tasks))


def _manifolds(cfg: ExperimentConfig) -> Tuple[NuclearLabel, ...]:
    if cfg.hyperfine_average:
        return nuclear_manifolds(cfg.physics.nuclear_weights)
    return (NuclearLabel(0, 1.0),)


def _protocol(cfg: ExperimentConfig, **overrides) -> ProtocolParams:
    return ProtocolParams(
        rabi_mw_mhz=cfg.physics.rabi_mw_mhz, rabi_opt_mhz=cfg.physics.rabi_opt_mhz, **overrides
    )


def _simulate(
    cfg: ExperimentConfig, seq: PulseSequence, nuclear: Optional[NuclearLabel] = None
) -> Trajectory:
    return run_sequence(
        seq,
        params=cfg.decoherence,
        cfg=cfg.integrator,
        nuclear=nuclear,
        hyperfine_mhz=cfg.physics.hyperfine_mhz,
        hyperfine_selectivity=cfg.physics.hyperfine_selectivity,
    )


def _expected_detector(cfg: ExperimentConfig):
    return replace(cfg.detector, poisson=False)


def _segment_trace(
    cfg: ExperimentConfig,
    traj: Trajectory,
    seq: PulseSequence,
    index: int,
    level: str,
    gamma: float,
) -> TimeTrace:
    start = traj.segment_start(index)
    end = start + seq.segments[index].duration_ns
    return fluorescence_trace(traj, level, gamma, _expected_detector(cfg), t_begin=start, t_end=end)


def _population_at(traj: Trajectory, level: str, t_ns: float) -> float:
    return float(np.interp(t_ns, traj.times, traj.population(level)))


def _phase_grid(points: int) -> np.ndarray:
    return 2.0 * math.pi * np.arange(points) / points


def _sample_counts(cfg: ExperimentConfig, raw: Dict[str, Table], columns: Dict[str, Sequence[str]]) -> None:
    """Replace expected counts by seeded Poisson draws (one stream index per column)."""
    if not cfg.detector.poisson:
        return
    index = 0
    for table_name, names in columns.items():
        for name in names:
            rng = derive_rng(cfg.seed, STREAM_POISSON, index)
            raw[table_name][name] = rng.poisson(np.maximum(raw[table_name][name], 0.0)).astype(float)
            index += 1


def _partial(name: str, raw: Dict[str, Table], nuclear: NuclearLabel) -> ExperimentResult:
    return ExperimentResult(name, raw, meta={"m_i": nuclear.m_i, "weight": nuclear.weight})


def _finish(
    name: str, raw: Dict[str, Table], cfg: ExperimentConfig, meta: Dict[str, Any]
) -> ExperimentResult:
    result = ExperimentResult(name, raw, meta=meta, config=config_to_dict(cfg))
    return analyze(result, cfg)


def analyze(result: ExperimentResult, cfg: ExperimentConfig) -> ExperimentResult:
    """(Re)compute fits, derived numbers and derived tables from the raw tables."""
    fits, derived, tables = ANALYZERS[result.experiment](result.raw, cfg)
    result.fits, result.derived, result.tables = fits, derived, tables
    return result


def _check_grids(per_manifold: Sequence[ExperimentResult], weights: Sequence[float]) -> None:
    if len(per_manifold) != len(weights) or not per_manifold:
        raise GridMismatchError(
            f"Expected one weight per manifold, got {len(weights)} for {len(per_manifold)}"
        )
    first = per_manifold[0]
    for other in per_manifold[1:]:
        if other.experiment != first.experiment or list(other.raw) != list(first.raw):
            raise GridMismatchError("Manifold results come from different experiments")
        for name, table in first.raw.items():
            if list(other.raw[name]) != list(table):
                raise GridMismatchError(f"Table {name}: columns differ between manifolds")
            grid = next(iter(table))
            if not np.array_equal(other.raw[name][grid], table[grid]):
                raise GridMismatchError(f"Table {name}: {grid} grid differs between manifolds")


def _average_raw(per_manifold: Sequence[ExperimentResult], weights: Sequence[float]) -> Dict[str, Table]:
    # first column of every table is its grid; the rest are summed in manifold order
    _check_grids(per_manifold, weights)
    averaged: Dict[str, Table] = {}
    for name, table in per_manifold[0].raw.items():
        grid = next(iter(table))
        averaged[name] = {grid: table[grid].copy()}
        for column in list(table)[1:]:
            total = weights[0] * per_manifold[0].raw[name][column]
            for weight, result in zip(weights[1:], per_manifold[1:]):
                total = total + weight * result.raw[name][column]
            averaged[name][column] = total
    return averaged


def _manifold_meta(per_manifold: Sequence[ExperimentResult], weights: Sequence[float]) -> Dict[str, Any]:
    return {
        "manifolds": [result.meta.get("m_i") for result in per_manifold],
        "weights": [float(w) for w in weights],
    }


def hyperfine_average(
    per_manifold: Sequence[ExperimentResult],
    weights: Sequence[float],
    cfg: ExperimentConfig,
) -> ExperimentResult:
    """
    Weighted average of manifold results, summed in manifold order, then re-analyzed.

    Raises:
        GridMismatchError: different experiments, tables, columns or grid values
    """
    averaged = _average_raw(per_manifold, weights)
    meta = _manifold_meta(per_manifold, weights)
    return _finish(per_manifold[0].experiment, averaged, cfg, meta)


def _over_manifolds(
    cfg: ExperimentConfig,
    name: str,
    point_tasks: Callable[[NuclearLabel], List[Callable[[], Any]]],
    assemble: Callable[[List[Any]], Dict[str, Table]],
) -> Tuple[Dict[str, Table], Dict[str, Any]]:
    """Run every manifold's sweep points in one pool and average the raw tables."""
    manifolds = _manifolds(cfg)
    tasks: List[Callable[[], Any]] = []
    counts = []
    for nuclear in manifolds:
        batch = point_tasks(nuclear)
        counts.append(len(batch))
        tasks.extend(batch)
    outputs = _run_tasks(cfg, tasks)

    partials, offset = [], 0
    for nuclear, count in zip(manifolds, counts):
        partials.append(_partial(name, assemble(outputs[offset:offset + count]), nuclear))
        offset += count
    weights = [nuclear.weight for nuclear in manifolds]
    if len(partials) == 1:
        return partials[0].raw, _manifold_meta(partials, [1.0])
    return _average_raw(partials, weights), _manifold_meta(partials, weights)


# --- MW -> optical -----------------------------------------------------------

def _mw2opt_point(cfg: ExperimentConfig, nuclear: NuclearLabel, phi_opt: float) -> np.ndarray:
    sweep = cfg.sweep.mw2opt
    protocol = _protocol(cfg, optical_readout_ns=sweep.optical_readout_ns, window_ns=sweep.window_ns)
    seq = seq_mw_to_opt(sweep.theta_rad, 0.0, phi_opt, 0.0, protocol)
    traj = _simulate(cfg, seq, nuclear)
    return _segment_trace(cfg, traj, seq, 3, "A2", cfg.decoherence.gamma_sp).counts


def _trace_column(index: int) -> str:
    return f"counts_phi_{index:02d}"


def exp_mw_to_opt(cfg: ExperimentConfig) -> ExperimentResult:
    """
    MW -> optical phase transfer.

    Writes theta with the MW pulses, sweeps the optical relative phase and
    records the A2 fluorescence trace of the optical readout at every phase.
    """
    sweep = cfg.sweep.mw2opt
    phases = _phase_grid(sweep.phase_points)
    logger.info("[EXPERIMENT] mw2opt: %d optical phases, theta=%.3f rad", phases.size, sweep.theta_rad)

    def point_tasks(nuclear):
        return [lambda phi=phi: _mw2opt_point(cfg, nuclear, phi) for phi in phases]

    def assemble(outputs):
        n_bins = outputs[0].size
        traces: Table = {"t_ns": cfg.detector.bin_ns * np.arange(n_bins)}
        for index, counts in enumerate(outputs):
            traces[_trace_column(index)] = counts
        return {"phases": {"phase_rad": phases.copy()}, "traces": traces}

    raw, meta = _over_manifolds(cfg, "mw2opt", point_tasks, assemble)
    _sample_counts(cfg, raw, {"traces": [_trace_column(i) for i in range(phases.size)]})
    return _finish("mw2opt", raw, cfg, meta)


def _fringe_at(
    trace_table: Table, bin_ns: float, phases: np.ndarray, t0: float, window: float
) -> np.ndarray:
    signals = []
    for index in range(phases.size):
        trace = TimeTrace(trace_table["t_ns"], trace_table[_trace_column(index)], bin_ns)
        signals.append(windowed_counts(trace, t0, window))
    return np.array(signals)


def _window_sums(values: np.ndarray, bin_ns: float, starts: np.ndarray, window: float) -> np.ndarray:
    # cumulative counts are linear inside a bin, so partial bins are clipped fractionally
    edges = bin_ns * np.arange(values.size + 1)
    cumulative = np.concatenate(([0.0], np.cumsum(values)))
    return np.interp(starts + window, edges, cumulative) - np.interp(starts, edges, cumulative)


def _phase_dependent_decay(traces: Table, i_max: int, i_min: int) -> Optional[ExponentialFit]:
    """Pumping-time estimator applied to the max - min fluorescence difference."""
    difference = traces[_trace_column(i_max)] - traces[_trace_column(i_min)]
    try:
        return fit_decay(
            traces["t_ns"],
            difference,
            1,
            CALIBRATION_SKIP_NS,
            CALIBRATION_SPAN_FACTOR * PUMPING_TIME_NS,
            fit_offset=True,
        )
    except FitError as exc:
        logger.warning("[FIT] Phase-dependent fluorescence decay fit failed: %s", exc)
        return None


def analyze_mw_to_opt(raw: Dict[str, Table], cfg: ExperimentConfig):
    sweep = cfg.sweep.mw2opt
    bin_ns = cfg.detector.bin_ns
    phases = raw["phases"]["phase_rad"]
    traces = raw["traces"]

    signals = _fringe_at(traces, bin_ns, phases, 0.0, sweep.window_ns)
    fringe = fit_sinusoid(FringeData(phases, signals))
    law = np.cos((sweep.theta_rad - phases) / 2.0) ** 2
    scale = float(np.dot(law, signals) / np.dot(law, law))
    r2_law = r_squared(signals, scale * law)
    i_max, i_min = int(np.argmax(signals)), int(np.argmin(signals))

    extent = traces["t_ns"].size * bin_ns
    last_start = min(sweep.window_t0_max_ns, extent - sweep.window_ns)
    starts = bin_ns * np.arange(int(math.floor(last_start / bin_ns + 1e-9)) + 1)
    vis = np.array([
        fit_sinusoid(FringeData(phases, _fringe_at(traces, bin_ns, phases, t0, sweep.window_ns))).visibility
        for t0 in starts
    ])

    # The visibility follows the phase-dependent fluorescence over the
    # measured total: its decay time comes from the time-resolved traces and
    # only the starting visibility is fitted.
    phase_decay = _phase_dependent_decay(traces, i_max, i_min)
    model_vis, v0, model_r2 = None, None, None
    if phase_decay is not None:
        total = traces[_trace_column(i_max)] + traces[_trace_column(i_min)]
        shape = _window_sums(phase_decay.evaluate(traces["t_ns"]), bin_ns, starts, sweep.window_ns)
        norm = _window_sums(total, bin_ns, starts, sweep.window_ns)
        if shape[0] != 0.0 and np.all(norm > 0):
            ratio = (shape / shape[0]) / (norm / norm[0])
            v0 = float(np.dot(ratio, vis) / np.dot(ratio, ratio))
            model_vis = v0 * ratio
            model_r2 = r_squared(vis, model_vis)

    # without dephasing the dark fringe point stays dark and the visibility never decays
    try:
        decay = fit_visibility_decay(starts, vis)
    except FitError as exc:
        logger.warning("[FIT] Visibility-vs-t0 fit failed: %s", exc)
        decay = None
    try:
        single = fit_decay(starts, vis, 1, fit_offset=False)
    except FitError as exc:
        logger.warning("[FIT] Single-exponential visibility fit failed: %s", exc)
        single = None

    fits = {
        "fringe": fringe,
        "phase_dependent_decay": phase_decay,
        "visibility_decay": decay,
        "visibility_single_exp": single,
    }
    derived = {
        "theta_rad": sweep.theta_rad,
        "fringe_visibility": fringe.visibility,
        "fringe_phase_rad": fringe.phase0,
        "fringe_r2_cos2_law": r2_law,
        "phase_max_rad": float(phases[i_max]),
        "phase_min_rad": float(phases[i_min]),
        "visibility_tau_ns": phase_decay.taus[0] if phase_decay else None,
        "visibility_v0": v0,
        "visibility_model_r2": model_r2,
        "visibility_tau_free_ns": decay.tau_ns if decay else None,
        "visibility_tau_single_ns": single.taus[0] if single else None,
    }
    vis_table: Table = {"t0_ns": starts, "visibility": vis}
    if model_vis is not None:
        vis_table["visibility_model"] = model_vis
    tables = {
        "fringe": {
            "phase_rad": phases,
            "signal": signals,
            "signal_norm": signals / (fringe.offset + fringe.amplitude),
        },
        "traces_max_min": {
            "t_ns": traces["t_ns"],
            "counts_max": traces[_trace_column(i_max)],
            "counts_min": traces[_trace_column(i_min)],
        },
        "visibility_vs_t0": vis_table,
    }
    return fits, derived, tables


# --- CPT -------------------------------------------------------------------

def _cpt_point(cfg: ExperimentConfig, rabi_opt_mhz: float, raman_mhz: float) -> float:
    sweep = cfg.sweep.cpt
    protocol = replace(_protocol(cfg), rabi_opt_mhz=rabi_opt_mhz)
    seq = seq_optical_pumping(sweep.initial_level, raman_mhz, sweep.pulse_ns, protocol)
    traj = _simulate(cfg, seq)
    return _segment_trace(cfg, traj, seq, 1, "A2", cfg.decoherence.gamma_sp).total()


def _rabi_key(rabi_mhz: float) -> str:
    return f"{rabi_mhz:g}".replace(".", "p")


def exp_cpt(cfg: ExperimentConfig) -> ExperimentResult:
    """
    CPT dip: total A2 fluorescence of a long optical pulse vs Raman detuning.

    Optical-only, so no hyperfine averaging. Each entry of rabi_scan_mhz
    repeats the sweep at that optical Rabi frequency.
    """
    sweep = cfg.sweep.cpt
    detunings = np.linspace(sweep.detuning_min_mhz, sweep.detuning_max_mhz, sweep.points)
    rabis = [cfg.physics.rabi_opt_mhz] + list(sweep.rabi_scan_mhz)
    logger.info("[EXPERIMENT] cpt: %d detunings x %d Rabi frequencies", detunings.size, len(rabis))

    tasks = [lambda rabi=rabi, d=d: _cpt_point(cfg, rabi, d) for rabi in rabis for d in detunings]
    outputs = np.array(_run_tasks(cfg, tasks)).reshape(len(rabis), detunings.size)

    raw = {"spectrum": {"detuning_mhz": detunings.copy(), "signal": outputs[0]}}
    for rabi, row in zip(rabis[1:], outputs[1:]):
        raw[f"spectrum_rabi_{_rabi_key(rabi)}"] = {"detuning_mhz": detunings.copy(), "signal": row}
    _sample_counts(cfg, raw, {name: ["signal"] for name in raw})
    return _finish("cpt", raw, cfg, {"rabi_scan_mhz": [float(r) for r in sweep.rabi_scan_mhz]})


def analyze_cpt(raw: Dict[str, Table], cfg: ExperimentConfig):
    spectrum = raw["spectrum"]
    dip = fit_lorentzian_dip(spectrum["detuning_mhz"], spectrum["signal"])
    fits: Dict[str, Any] = {"dip": dip}
    derived: Dict[str, Any] = {
        "center_mhz": dip.center_mhz,
        "fwhm_mhz": dip.fwhm_mhz,
        "depth": dip.depth,
        "rabi_opt_mhz": cfg.physics.rabi_opt_mhz,
    }
    scan = {}
    for rabi in cfg.sweep.cpt.rabi_scan_mhz:
        table = raw[f"spectrum_rabi_{_rabi_key(rabi)}"]
        fit = fit_lorentzian_dip(table["detuning_mhz"], table["signal"])
        fits[f"dip_rabi_{_rabi_key(rabi)}"] = fit
        scan[f"{rabi:g}"] = fit.fwhm_mhz
    derived["fwhm_mhz_by_rabi"] = scan
    tables = {
        "spectrum_norm": {
            "detuning_mhz": spectrum["detuning_mhz"],
            "signal_norm": spectrum["signal"] / dip.baseline,
        }
    }
    return fits, derived, tables


# --- optical pumping ---------------------------------------------------------

def exp_pumping(cfg: ExperimentConfig) -> ExperimentResult:
    """Fluorescence decay from GM on Raman resonance and off it by raman_offset_mhz."""
    sweep = cfg.sweep.pumping
    logger.info("[EXPERIMENT] pump: on-Raman %.0f ns, %.0f MHz off Raman %.0f ns",
                sweep.on_duration_ns, sweep.raman_offset_mhz, sweep.off_duration_ns)
    tasks = [
        lambda: simulate_pumping_trace(cfg, 0.0, sweep.on_duration_ns),
        lambda: simulate_pumping_trace(cfg, sweep.raman_offset_mhz, sweep.off_duration_ns),
    ]
    on_trace, off_trace = _run_tasks(cfg, tasks)
    raw = {
        "trace_on_raman": {"t_ns": on_trace.bin_starts_ns, "counts": on_trace.counts},
        "trace_off_raman": {"t_ns": off_trace.bin_starts_ns, "counts": off_trace.counts},
    }
    _sample_counts(cfg, raw, {"trace_on_raman": ["counts"], "trace_off_raman": ["counts"]})
    return _finish("pump", raw, cfg, {"raman_offset_mhz": sweep.raman_offset_mhz})


def analyze_pumping(raw: Dict[str, Table], cfg: ExperimentConfig):
    sweep = cfg.sweep.pumping
    bin_ns = cfg.detector.bin_ns
    on = TimeTrace(raw["trace_on_raman"]["t_ns"], raw["trace_on_raman"]["counts"], bin_ns)
    off = TimeTrace(raw["trace_off_raman"]["t_ns"], raw["trace_off_raman"]["counts"], bin_ns)

    # same estimator as the gamma_sp / gamma_mix calibration
    fast = fit_exponential(on, 1, CALIBRATION_SKIP_NS, True, CALIBRATION_SPAN_FACTOR * PUMPING_TIME_NS)
    slow = fit_exponential(off, 1, CALIBRATION_SKIP_NS, False, CALIBRATION_SPAN_FACTOR * MIXING_TIME_NS)
    try:
        double = fit_exponential(on, 2, sweep.double_fit_start_ns, fit_offset=False)
    except FitError as exc:
        logger.warning("[FIT] Double-exponential fit of the on-Raman trace failed: %s", exc)
        double = None

    fits = {"on_raman_single": fast, "on_raman_double": double, "off_raman_single": slow}
    derived = {
        "tau_fast_ns": fast.taus[0],
        "tau_slow_ns": slow.taus[0],
        "tau_double_ns": list(double.taus) if double else None,
        "gamma_sp_per_ns": cfg.decoherence.gamma_sp,
        "gamma_mix_per_ns": cfg.decoherence.gamma_mix,
    }
    return fits, derived, {}


# --- optical -> MW -----------------------------------------------------------

def _opt2mw_signal(cfg: ExperimentConfig, nuclear: NuclearLabel, phi_mw: float, delay_ns: float) -> float:
    sweep = cfg.sweep.opt2mw
    protocol = _protocol(cfg, pumping_ns=sweep.pumping_ns, ey_readout=sweep.readout_mode == "ey_drive")
    seq = seq_opt_to_mw((sweep.phi_opt_rad, 0.0), (phi_mw, 0.0), delay_ns, protocol)
    traj = _simulate(cfg, seq, nuclear)
    index = seq.readout_segments()[-1]
    marker = seq.segments[index].readout
    if marker.level == "G0":
        t_read = traj.segment_start(index) + marker.t0_offset_ns
        return cfg.detector.repetitions * cfg.detector.efficiency * _population_at(traj, "G0", t_read)
    trace = _segment_trace(cfg, traj, seq, index, marker.level, cfg.decoherence.gamma_ey)
    return windowed_counts(trace, marker.t0_offset_ns, min(marker.window_ns, trace.extent_ns))


def exp_opt_to_mw(cfg: ExperimentConfig) -> ExperimentResult:
    """
    Optical -> MW phase transfer.

    (a) G0 readout vs MW relative phase after pumping into the optical dark
    state; (b) in-phase and antiphase readouts vs storage delay.
    """
    sweep = cfg.sweep.opt2mw
    phases = _phase_grid(sweep.phase_points)
    delays = np.linspace(sweep.delay_min_ns, sweep.delay_max_ns, sweep.delay_points)
    logger.info("[EXPERIMENT] opt2mw: %d MW phases, %d delays", phases.size, delays.size)
    in_phase = sweep.phi_opt_rad
    antiphase = sweep.phi_opt_rad + math.pi

    def point_tasks(nuclear):
        tasks = [lambda phi=phi: _opt2mw_signal(cfg, nuclear, phi, sweep.fringe_delay_ns) for phi in phases]
        for delay in delays:
            tasks.append(lambda d=delay: _opt2mw_signal(cfg, nuclear, in_phase, d))
            tasks.append(lambda d=delay: _opt2mw_signal(cfg, nuclear, antiphase, d))
        return tasks

    def assemble(outputs):
        fringe = np.array(outputs[:phases.size])
        pairs = np.array(outputs[phases.size:]).reshape(delays.size, 2)
        return {
            "fringe_raw": {"phase_rad": phases.copy(), "signal": fringe},
            "delay_raw": {
                "delay_ns": delays.copy(),
                "signal_in_phase": pairs[:, 0].copy(),
                "signal_antiphase": pairs[:, 1].copy(),
            },
        }

    raw, meta = _over_manifolds(cfg, "opt2mw", point_tasks, assemble)
    meta["readout_mode"] = sweep.readout_mode
    if sweep.readout_mode == "ey_drive":
        columns = {"fringe_raw": ["signal"], "delay_raw": ["signal_in_phase", "signal_antiphase"]}
        _sample_counts(cfg, raw, columns)
    return _finish("opt2mw", raw, cfg, meta)


def _pair_visibility(a: float, b: float) -> float:
    high, low = max(a, b, 0.0), max(min(a, b), 0.0)
    return visibility(high, low) if high > 0 else 0.0


def analyze_opt_to_mw(raw: Dict[str, Table], cfg: ExperimentConfig):
    fringe_raw = raw["fringe_raw"]
    fringe = fit_sinusoid(FringeData(fringe_raw["phase_rad"], fringe_raw["signal"]))
    delay_raw = raw["delay_raw"]
    vis = np.array(
        [_pair_visibility(a, b) for a, b in zip(delay_raw["signal_in_phase"], delay_raw["signal_antiphase"])]
    )
    try:
        decay = fit_decay(delay_raw["delay_ns"], vis, 1, fit_offset=False)
    except FitError as exc:
        logger.warning("[FIT] Visibility-vs-delay fit failed: %s", exc)
        decay = None

    phase_min = (fringe.phase0 + math.pi) % (2.0 * math.pi)
    fits = {"fringe": fringe, "visibility_vs_delay": decay}
    derived = {
        "phi_opt_rad": cfg.sweep.opt2mw.phi_opt_rad,
        "fringe_visibility": fringe.visibility,
        "fringe_min_phase_rad": phase_min,
        "visibility_at_min_delay": float(vis[0]),
        "visibility_tau_ns": decay.taus[0] if decay else None,
        "t2star_us": cfg.decoherence.t2star_us,
    }
    tables = {
        "fringe": {
            "phase_rad": fringe_raw["phase_rad"],
            "signal": fringe_raw["signal"],
            "signal_norm": fringe_raw["signal"] / (fringe.offset + fringe.amplitude),
        },
        "visibility_vs_delay": {"delay_ns": delay_raw["delay_ns"], "visibility": vis},
    }
    return fits, derived, tables


ANALYZERS: Dict[str, Callable] = {
    "mw2opt": analyze_mw_to_opt,
    "cpt": analyze_cpt,
    "pump": analyze_pumping,
    "opt2mw": analyze_opt_to_mw,
}

EXPERIMENTS: Dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "mw2opt": exp_mw_to_opt,
    "cpt": exp_cpt,
    "pump": exp_pumping,
    "opt2mw": exp_opt_to_mw,
}

"""
Fluorescence Analysis

Turns trajectories into detector observables and fits the three curve
families used by the transfer experiments.

Key Features:
- Binned time traces from excited-state populations (2.8 ns bins)
- Fractional-bin window sums for the 28 ns detection windows
- Fixed-period sinusoid fit (closed-form least squares) and fringe visibility
- Inverted-Lorentzian dip fit (grid start + Levenberg-Marquardt refinement)
- Single/double exponential fits by variable projection on log(tau)
- Visibility-decay fit for fringes sitting on a phase-independent background
- CSV emitter for result tables (one column per series)
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union
import csv
import logging
import math

import numpy as np
from scipy import integrate, optimize

from master_equation import NumericalError, Trajectory
from sim_defaults import DETECTOR_BIN_NS, STREAM_POISSON, derive_rng

logger = logging.getLogger(__name__)

MIN_FRINGE_POINTS = 8
MIN_SPECTRUM_POINTS = 9
MIN_DECAY_POINTS = 10
LOG_TAU_BOUNDS = (math.log(0.5), math.log(1e7))  # ns
DOUBLE_GRID_NS = (1.0, 1e4)
DOUBLE_GRID_POINTS = 60
SPAN_TOL = 1e-9


class FitError(NumericalError, ValueError):
    """A fit could not be set up or did not converge."""


@dataclass(frozen=True)
class DetectorModel:
    bin_ns: float = DETECTOR_BIN_NS
    efficiency: float = 1.0
    poisson: bool = False
    seed: int = 0
    repetitions: int = 1  # accumulated shots per point

    def __post_init__(self):
        bin_ns = float(self.bin_ns)
        if not math.isfinite(bin_ns) or bin_ns <= 0:
            raise ValueError(f"bin_ns: must be > 0, got {self.bin_ns!r}")
        efficiency = float(self.efficiency)
        if not 0.0 < efficiency <= 1.0:
            raise ValueError(f"efficiency: must lie in (0, 1], got {self.efficiency!r}")
        object.__setattr__(self, "bin_ns", bin_ns)
        object.__setattr__(self, "efficiency", efficiency)
        object.__setattr__(self, "poisson", bool(self.poisson))
        object.__setattr__(self, "seed", int(self.seed))
        if isinstance(self.repetitions, bool) or int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise ValueError(f"repetitions: expected an integer >= 1, got {self.repetitions!r}")
        object.__setattr__(self, "repetitions", int(self.repetitions))


@dataclass(frozen=True, eq=False)
class TimeTrace:
    """Counts per contiguous bin; bin starts are relative to origin_ns."""

    bin_starts_ns: np.ndarray
    counts: np.ndarray
    bin_ns: float = DETECTOR_BIN_NS
    origin_ns: float = 0.0

    def __post_init__(self):
        starts = np.asarray(self.bin_starts_ns, dtype=float)
        counts = np.asarray(self.counts, dtype=float)
        if starts.shape != counts.shape or starts.ndim != 1:
            raise ValueError("bin_starts_ns and counts must be 1-D arrays of equal length")
        if np.any(counts < 0):
            raise ValueError("counts: must be >= 0")
        if starts.size > 1 and not np.allclose(np.diff(starts), self.bin_ns, rtol=0, atol=1e-9):
            raise ValueError("bin_starts_ns: bins must be contiguous")
        object.__setattr__(self, "bin_starts_ns", starts)
        object.__setattr__(self, "counts", counts)

    @property
    def extent_ns(self) -> float:
        return float(self.bin_starts_ns.size * self.bin_ns)

    def total(self) -> float:
        return float(np.sum(self.counts))


@dataclass(frozen=True, eq=False)
class FringeData:
    phases_rad: np.ndarray
    signals: np.ndarray

    def __post_init__(self):
        phases = np.asarray(self.phases_rad, dtype=float)
        signals = np.asarray(self.signals, dtype=float)
        if phases.shape != signals.shape or phases.ndim != 1:
            raise ValueError("phases_rad and signals must be 1-D arrays of equal length")
        if phases.size < MIN_FRINGE_POINTS:
            raise ValueError(f"FringeData needs >= {MIN_FRINGE_POINTS} points, got {phases.size}")
        # a grid without its endpoint still covers one full period
        spacing = (phases.max() - phases.min()) / (phases.size - 1)
        if phases.max() - phases.min() + spacing < 2.0 * math.pi - SPAN_TOL:
            raise ValueError("phases_rad: grid must span a full 2*pi period")
        object.__setattr__(self, "phases_rad", phases)
        object.__setattr__(self, "signals", signals)


@dataclass(frozen=True)
class SinusoidFit:
    offset: float
    amplitude: float
    phase0: float
    visibility: float
    r2: float = 1.0

    def evaluate(self, phases) -> np.ndarray:
        return self.offset + self.amplitude * np.cos(np.asarray(phases, dtype=float) - self.phase0)


@dataclass(frozen=True)
class LorentzianFit:
    center_mhz: float
    fwhm_mhz: float
    depth: float
    baseline: float
    r2: float = 1.0

    def evaluate(self, detunings) -> np.ndarray:
        x = np.asarray(detunings, dtype=float)
        return _lorentzian_dip(x, self.center_mhz, self.fwhm_mhz, self.depth, self.baseline)


@dataclass(frozen=True)
class ExponentialFit:
    """Sum of decays a_k exp(-(t - t_ref)/tau_k) plus offset; taus ascending."""

    components: Tuple[Tuple[float, float], ...]
    offset: float = 0.0
    t_ref_ns: float = 0.0
    r2: float = 1.0

    @property
    def taus(self) -> Tuple[float, ...]:
        return tuple(tau for _, tau in self.components)

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float) - self.t_ref_ns
        values = np.full(t.shape, self.offset)
        for amplitude, tau in self.components:
            values = values + amplitude * np.exp(-t / tau)
        return values


@dataclass(frozen=True)
class VisibilityDecayFit:
    """V(t) = v0 / (1 + background * (exp(t/tau) - 1))."""

    v0: float
    tau_ns: float
    background: float
    r2: float = 1.0

    def evaluate(self, t) -> np.ndarray:
        return _visibility_model(np.asarray(t, dtype=float), self.v0, self.tau_ns, self.background)


def fluorescence_trace(
    traj: Trajectory,
    emitting_level: str,
    gamma_rad: float,
    det: DetectorModel = DetectorModel(),
    t_begin: Optional[float] = None,
    t_end: Optional[float] = None,
    stream_index: int = 0,
) -> TimeTrace:
    """
    Bin repetitions * efficiency * gamma_rad * rho_ee(t) into detector counts.

    Args:
        traj: recorded trajectory
        emitting_level: excited level whose population radiates (A2 or EY)
        gamma_rad: radiative rate counted by the detector (1/ns)
        det: bin width, efficiency, repetitions and optional Poisson sampling
        t_begin, t_end: time range (defaults: whole trajectory); only full bins are kept
        stream_index: Poisson sub-stream index (sweep point)

    Returns:
        TimeTrace with bin starts relative to t_begin

    Raises:
        ValueError: fewer than 2 recorded samples per bin or an empty range
    """
    if gamma_rad < 0:
        raise ValueError(f"gamma_rad: must be >= 0, got {gamma_rad}")
    times = traj.times
    population = traj.population(emitting_level)
    begin = float(times[0] if t_begin is None else t_begin)
    end = float(times[-1] if t_end is None else t_end)
    if begin < times[0] - SPAN_TOL or end > times[-1] + SPAN_TOL:
        raise ValueError(f"Range [{begin}, {end}] ns lies outside the trajectory [{times[0]}, {times[-1]}]")

    n_bins = int(math.floor((end - begin) / det.bin_ns + 1e-9))
    if n_bins < 1:
        raise ValueError(f"Range of {end - begin:.3f} ns is shorter than one {det.bin_ns} ns bin")
    edges = begin + det.bin_ns * np.arange(n_bins + 1)

    inside = (times > begin) & (times < edges[-1])
    spacing = np.diff(np.concatenate(([begin], times[inside], [edges[-1]])))
    if np.max(spacing) > det.bin_ns / 2.0 + SPAN_TOL:
        raise ValueError(
            f"Trajectory under-sampled: {np.max(spacing):.3f} ns between records, "
            f"need <= {det.bin_ns / 2.0:.3f} ns for {det.bin_ns} ns bins"
        )

    grid = np.union1d(times[inside], edges)
    values = np.interp(grid, times, population)
    cumulative = integrate.cumulative_trapezoid(values, grid, initial=0.0)
    per_bin = np.diff(cumulative[np.searchsorted(grid, edges)])
    counts = np.maximum(det.repetitions * det.efficiency * gamma_rad * per_bin, 0.0)

    if det.poisson:
        counts = derive_rng(det.seed, STREAM_POISSON, stream_index).poisson(counts).astype(float)
    return TimeTrace(edges[:-1] - begin, counts, det.bin_ns, begin)


def windowed_counts(trace: TimeTrace, t0_ns: float, window_ns: float) -> float:
    """Counts in [t0, t0 + window), partial bins weighted by their overlap."""
    if window_ns < 0:
        raise ValueError(f"window_ns: must be >= 0, got {window_ns}")
    if t0_ns < -SPAN_TOL or t0_ns + window_ns > trace.extent_ns + SPAN_TOL:
        raise ValueError(
            f"Window [{t0_ns}, {t0_ns + window_ns}] ns lies outside the trace (0..{trace.extent_ns} ns)"
        )
    if window_ns == 0:
        return 0.0
    starts = trace.bin_starts_ns
    overlap = np.minimum(starts + trace.bin_ns, t0_ns + window_ns) - np.maximum(starts, t0_ns)
    weights = np.clip(overlap / trace.bin_ns, 0.0, 1.0)
    return float(np.sum(trace.counts * weights))


def visibility(i_max: float, i_min: float) -> float:
    """(I_max - I_min) / (I_max + I_min)."""
    if not (i_max >= i_min >= 0.0) or i_max <= 0.0:
        raise ValueError(f"visibility needs i_max >= i_min >= 0 and i_max > 0, got ({i_max}, {i_min})")
    return (i_max - i_min) / (i_max + i_min)


def r_squared(y, model) -> float:
    y = np.asarray(y, dtype=float)
    residual = float(np.sum((y - np.asarray(model, dtype=float)) ** 2))
    total = float(np.sum((y - np.mean(y)) ** 2))
    if total == 0.0:
        return 1.0 if residual == 0.0 else 0.0
    return 1.0 - residual / total


def fit_sinusoid(data: FringeData) -> SinusoidFit:
    """
    Least-squares fit of a + b cos(phi) + c sin(phi) (period 2 pi).

    Raises:
        FitError: if the fitted offset is not positive
    """
    phases = data.phases_rad
    design = np.column_stack((np.ones_like(phases), np.cos(phases), np.sin(phases)))
    (a, b, c), *_ = np.linalg.lstsq(design, data.signals, rcond=None)
    if a <= 0:
        raise FitError(f"Fringe offset {a:.3e} <= 0; visibility undefined")
    amplitude = math.hypot(b, c)
    phase0 = math.atan2(c, b)
    vis = amplitude / a
    if vis > 1.0:
        logger.warning("[FIT] Fringe visibility %.4f clamped to 1", vis)
    vis = min(max(vis, 0.0), 1.0)
    r2 = r_squared(data.signals, design @ np.array([a, b, c]))
    return SinusoidFit(float(a), float(amplitude), float(phase0), float(vis), r2)


def _lorentzian_shape(x: np.ndarray, center: float, fwhm: float) -> np.ndarray:
    return 1.0 / (1.0 + ((x - center) / (0.5 * fwhm)) ** 2)


def _lorentzian_dip(x, center, fwhm, depth, baseline) -> np.ndarray:
    return baseline * (1.0 - depth * _lorentzian_shape(x, center, fwhm))


def fit_lorentzian_dip(detunings_mhz, signals) -> LorentzianFit:
    """
    Fit baseline * (1 - depth / (1 + ((x - center)/(fwhm/2))^2)).

    A coarse grid over (center, fwhm) with baseline and depth solved linearly
    gives the start; Levenberg-Marquardt refines all four parameters.

    Raises:
        FitError: too few points, flat spectrum, minimum on the edge of the
            sweep, or no convergence
    """
    x = np.asarray(detunings_mhz, dtype=float)
    y = np.asarray(signals, dtype=float)
    if x.shape != y.shape or x.size < MIN_SPECTRUM_POINTS:
        raise FitError(f"Lorentzian fit needs >= {MIN_SPECTRUM_POINTS} points, got {x.size}")
    order = np.argsort(x)
    x, y = x[order], y[order]
    if np.ptp(y) <= 1e-12 * float(np.max(np.abs(y))):
        raise FitError("Spectrum is flat: no dip")
    lowest = int(np.argmin(y))
    if lowest in (0, x.size - 1):
        raise FitError("Spectrum minimum lies on the sweep edge: no interior dip")

    span = float(x[-1] - x[0])
    step = span / (x.size - 1)
    best = None
    for center in x:
        for fwhm in np.geomspace(step / 2.0, 2.0 * span, 48):
            shape = _lorentzian_shape(x, center, fwhm)
            design = np.column_stack((np.ones_like(x), -shape))
            coeffs, *_ = np.linalg.lstsq(design, y, rcond=None)
            cost = float(np.sum((design @ coeffs - y) ** 2))
            if best is None or cost < best[0]:
                best = (cost, center, fwhm, coeffs)
    _, center0, fwhm0, (baseline0, scaled_depth0) = best
    depth0 = scaled_depth0 / baseline0 if baseline0 != 0 else 0.5

    def residual(p):
        return _lorentzian_dip(x, p[0], p[1], p[2], p[3]) - y

    result = optimize.least_squares(
        residual,
        np.array([center0, fwhm0, depth0, baseline0]),
        method="lm",
        xtol=1e-12,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=200 * (4 + 1),
    )
    if result.status <= 0:
        raise FitError(f"Lorentzian fit did not converge: {result.message}")
    center, fwhm, depth, baseline = result.x
    fwhm = abs(fwhm)
    if fwhm <= 0 or depth <= 0:
        raise FitError(f"Lorentzian fit found no dip (fwhm={fwhm:.3e}, depth={depth:.3e})")
    r2 = r_squared(y, _lorentzian_dip(x, center, fwhm, depth, baseline))
    logger.debug("[FIT] Lorentzian center=%.4f MHz fwhm=%.4f MHz depth=%.4f", center, fwhm, depth)
    return LorentzianFit(float(center), float(fwhm), float(depth), float(baseline), r2)


def _decay_basis(t: np.ndarray, taus: Sequence[float], fit_offset: bool) -> np.ndarray:
    columns = [np.exp(-t / tau) for tau in taus]
    if fit_offset:
        columns.append(np.ones_like(t))
    return np.column_stack(columns)


def _projected_residual(t, y, log_taus, fit_offset):
    basis = _decay_basis(t, np.exp(log_taus), fit_offset)
    coeffs, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return basis @ coeffs - y, coeffs


def _single_start(t: np.ndarray, y: np.ndarray, fit_offset: bool) -> float:
    # log-linear estimate, checked against a coarse scan
    floor = np.min(y) - 1e-3 * np.ptp(y) if fit_offset else 0.0
    shifted = y - floor
    candidates = []
    if np.all(shifted > 0):
        slope = np.polyfit(t, np.log(shifted), 1)[0]
        if slope < 0 and math.isfinite(slope):
            candidates.append(math.log(-1.0 / slope))
    span = max(float(t[-1] - t[0]), 1.0)
    candidates.extend(np.linspace(math.log(0.5), math.log(1e3 * span), 60))
    candidates = [float(np.clip(c, *LOG_TAU_BOUNDS)) for c in candidates]
    costs = [np.sum(_projected_residual(t, y, np.array([c]), fit_offset)[0] ** 2) for c in candidates]
    return candidates[int(np.argmin(costs))]


def _double_start(t: np.ndarray, y: np.ndarray, fit_offset: bool) -> np.ndarray:
    grid = np.log(np.geomspace(*DOUBLE_GRID_NS, DOUBLE_GRID_POINTS))
    best = None
    for i, fast in enumerate(grid):
        for slow in grid[i + 1:]:
            cost = float(np.sum(_projected_residual(t, y, np.array([fast, slow]), fit_offset)[0] ** 2))
            if best is None or cost < best[0]:
                best = (cost, fast, slow)
    return np.array(best[1:])


def fit_decay(
    t,
    y,
    n_components: int = 1,
    t_start: float = 0.0,
    t_stop: Optional[float] = None,
    fit_offset: bool = True,
) -> ExponentialFit:
    """
    Fit sum_k a_k exp(-(t - t_ref)/tau_k) (+ offset) to samples with t_start <= t <= t_stop.

    Amplitudes and offset are linear parameters solved inside each evaluation
    (variable projection); only log(tau) is refined by the trust-region solver.

    Args:
        t, y: sample times (ns) and values
        n_components: 1 or 2
        t_start, t_stop: fit range; t_ref is the first sample inside it
        fit_offset: include a constant background, else it is fixed to 0

    Raises:
        FitError: too few points, constant data, non-positive data without
            offset, or no convergence
    """
    if n_components not in (1, 2):
        raise ValueError(f"n_components: must be 1 or 2, got {n_components!r}")
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = t >= t_start - SPAN_TOL
    if t_stop is not None:
        mask &= t <= t_stop + SPAN_TOL
    t, y = t[mask], y[mask]
    if t.size < MIN_DECAY_POINTS:
        raise FitError(f"Exponential fit needs >= {MIN_DECAY_POINTS} points after t_start, got {t.size}")
    if np.ptp(y) <= 1e-12 * float(np.max(np.abs(y))):
        raise FitError("Data are constant: no decay to fit")
    if not fit_offset and np.all(y <= 0):
        raise FitError("Data are non-positive: no decay to fit without an offset")

    t_ref = float(t[0])
    shifted = t - t_ref
    if n_components == 1:
        start = np.array([_single_start(shifted, y, fit_offset)])
    else:
        start = _double_start(shifted, y, fit_offset)

    result = optimize.least_squares(
        lambda p: _projected_residual(shifted, y, p, fit_offset)[0],
        start,
        method="trf",
        bounds=LOG_TAU_BOUNDS,
        xtol=1e-12,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=200 * (n_components + 1),
    )
    if result.status <= 0:
        raise FitError(f"Exponential fit did not converge: {result.message}")

    residual, coeffs = _projected_residual(shifted, y, result.x, fit_offset)
    taus = np.exp(result.x)
    if np.any(np.isclose(result.x, LOG_TAU_BOUNDS, rtol=0, atol=1e-6)):
        logger.warning("[FIT] Decay time at fit bound: %s ns", np.array2string(taus, precision=3))
    offset = float(coeffs[-1]) if fit_offset else 0.0
    components = sorted(zip(coeffs[:n_components], taus), key=lambda item: item[1])
    r2 = r_squared(y, residual + y)
    return ExponentialFit(
        tuple((float(a), float(tau)) for a, tau in components), offset, t_ref, r2
    )


def fit_exponential(
    trace: TimeTrace,
    n_components: int = 1,
    t_start_ns: float = 0.0,
    fit_offset: bool = True,
    t_stop_ns: Optional[float] = None,
) -> ExponentialFit:
    """Exponential fit of a time trace against its bin start times."""
    return fit_decay(trace.bin_starts_ns, trace.counts, n_components, t_start_ns, t_stop_ns, fit_offset)


def _visibility_model(t, v0, tau, background):
    return v0 / (1.0 + background * np.expm1(t / tau))


def fit_visibility_decay(t0_ns, vis) -> VisibilityDecayFit:
    """
    Fit V(t) = v0 / (1 + b (exp(t/tau) - 1)) with b in [0, 1].

    At b = 1 this is v0 exp(-t/tau); smaller b describes a decaying fringe
    amplitude over a background that is partly phase independent.
    """
    t = np.asarray(t0_ns, dtype=float)
    v = np.asarray(vis, dtype=float)
    if t.shape != v.shape or t.size < 3:
        raise FitError(f"Visibility decay fit needs >= 3 points, got {t.size}")
    if np.ptp(v) <= 1e-12 or np.all(v <= 0):
        raise FitError("Visibility does not decay")
    t_scale = t - t[0]
    single = fit_decay(t_scale, v, 1, fit_offset=False) if t.size >= MIN_DECAY_POINTS else None
    tau0 = single.taus[0] if single else max(float(np.ptp(t)), 1.0)

    def residual(p):
        return _visibility_model(t, p[0], math.exp(p[1]), p[2]) - v

    best = None
    for background in (1.0, 0.5, 0.1):
        v_start = max(float(v[0]) * (1.0 + background * np.expm1(t[0] / tau0)), 1e-6)
        result = optimize.least_squares(
            residual,
            np.array([v_start, math.log(tau0), background]),
            method="trf",
            bounds=([0.0, LOG_TAU_BOUNDS[0], 0.0], [np.inf, LOG_TAU_BOUNDS[1], 1.0]),
            xtol=1e-12,
            ftol=1e-12,
            gtol=1e-12,
            max_nfev=2000,
        )
        if result.status > 0 and (best is None or result.cost < best.cost):
            best = result
    if best is None:
        raise FitError("Visibility decay fit did not converge")
    v0, log_tau, background = best.x
    tau = math.exp(log_tau)
    r2 = r_squared(v, _visibility_model(t, v0, tau, background))
    return VisibilityDecayFit(float(v0), float(tau), float(background), r2)


# --- CSV emitters ----------------------------------------------------------

def _write_rows(target: Union[str, TextIO], header: List[str], rows) -> None:
    if isinstance(target, str):
        with open(target, "w", newline="") as handle:
            _write_rows(handle, header, rows)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(value)) for value in row])


def write_table_csv(target: Union[str, TextIO], table: Dict[str, np.ndarray]) -> None:
    """One column per table entry in insertion order; values keep full float precision."""
    columns = list(table)
    _write_rows(target, columns, zip(*(table[name] for name in columns)))

import io
import math

import numpy as np
import pytest

from fluorescence_analysis import (
    DetectorModel,
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
from master_equation import Trajectory
from nv_levels import IDX_A2, IDX_G0


def _trajectory(times, a2_population):
    states = np.zeros((len(times), 5, 5), dtype=complex)
    states[:, IDX_A2, IDX_A2] = a2_population
    states[:, IDX_G0, IDX_G0] = 1.0 - np.asarray(a2_population)
    return Trajectory(np.asarray(times, dtype=float), states)


def test_constant_population_gives_flat_trace():
    times = np.arange(0, 113) * 0.25
    traj = _trajectory(times, np.full(times.size, 0.5))
    trace = fluorescence_trace(traj, "A2", 0.1, DetectorModel(bin_ns=2.8, efficiency=0.5))
    assert trace.counts.size == 10
    np.testing.assert_allclose(trace.counts, 0.5 * 0.1 * 0.5 * 2.8, rtol=1e-12)
    np.testing.assert_allclose(trace.bin_starts_ns, 2.8 * np.arange(10))


def test_linear_population_bins_integrate_exactly():
    times = np.arange(0, 113) * 0.25
    traj = _trajectory(times, times / 28.0)
    trace = fluorescence_trace(traj, "A2", 1.0, DetectorModel(bin_ns=2.8))
    edges = 2.8 * np.arange(11)
    expected = (edges[1:] ** 2 - edges[:-1] ** 2) / (2 * 28.0)
    np.testing.assert_allclose(trace.counts, expected, rtol=1e-12)


def test_trace_range_is_relative_to_begin():
    times = np.arange(0, 201) * 0.25
    traj = _trajectory(times, np.full(times.size, 0.2))
    trace = fluorescence_trace(traj, "A2", 1.0, t_begin=10.0, t_end=30.0)
    assert trace.origin_ns == 10.0
    assert trace.bin_starts_ns[0] == 0.0
    assert trace.counts.size == 7


def test_under_sampled_trajectory_rejected():
    times = np.arange(0, 15) * 2.0
    traj = _trajectory(times, np.full(times.size, 0.5))
    with pytest.raises(ValueError, match="under-sampled"):
        fluorescence_trace(traj, "A2", 1.0)


def test_poisson_counts_are_seeded_per_stream():
    times = np.arange(0, 401) * 0.25
    traj = _trajectory(times, np.full(times.size, 0.5))
    det = DetectorModel(poisson=True, seed=3)
    first = fluorescence_trace(traj, "A2", 10.0, det, stream_index=1)
    again = fluorescence_trace(traj, "A2", 10.0, det, stream_index=1)
    other = fluorescence_trace(traj, "A2", 10.0, det, stream_index=2)
    np.testing.assert_array_equal(first.counts, again.counts)
    assert not np.array_equal(first.counts, other.counts)
    assert np.all(first.counts == np.round(first.counts))


def test_windowed_counts_fractional_bins():
    trace = TimeTrace(2.8 * np.arange(10), np.ones(10), 2.8)
    assert windowed_counts(trace, 0.0, 28.0) == pytest.approx(10.0)
    assert windowed_counts(trace, 1.4, 2.8) == pytest.approx(1.0)
    assert windowed_counts(trace, 1.4, 1.4) == pytest.approx(0.5)
    assert windowed_counts(trace, 5.0, 0.0) == 0.0
    with pytest.raises(ValueError, match="outside"):
        windowed_counts(trace, 10.0, 28.0)


def test_time_trace_validation():
    with pytest.raises(ValueError, match="contiguous"):
        TimeTrace(np.array([0.0, 2.8, 7.0]), np.ones(3), 2.8)
    with pytest.raises(ValueError, match="counts"):
        TimeTrace(np.array([0.0]), np.array([-1.0]), 2.8)


def test_visibility():
    assert visibility(1.0, 0.0) == 1.0
    assert visibility(2.0, 2.0) == 0.0
    assert visibility(3.0, 1.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        visibility(1.0, 2.0)


def test_sinusoid_fit_recovers_fringe():
    phases = 2 * math.pi * np.arange(24) / 24
    data = FringeData(phases, 4.0 + 1.0 * np.cos(phases - 1.2))
    fit = fit_sinusoid(data)
    assert fit.offset == pytest.approx(4.0)
    assert fit.amplitude == pytest.approx(1.0)
    assert fit.phase0 == pytest.approx(1.2)
    assert fit.visibility == pytest.approx(0.25)
    assert fit.r2 == pytest.approx(1.0)
    np.testing.assert_allclose(fit.evaluate(phases), data.signals, atol=1e-12)


def test_sinusoid_fit_rejects_negative_offset():
    phases = 2 * math.pi * np.arange(8) / 8
    with pytest.raises(FitError, match="offset"):
        fit_sinusoid(FringeData(phases, -1.0 + np.cos(phases)))


def test_fringe_data_validation():
    with pytest.raises(ValueError, match="points"):
        FringeData(np.linspace(0, 2 * math.pi, 7), np.ones(7))
    with pytest.raises(ValueError, match="period"):
        FringeData(np.linspace(0, math.pi, 12), np.ones(12))


def test_lorentzian_fit_recovers_dip():
    x = np.linspace(-10, 10, 41)
    y = 5.0 * (1 - 0.6 / (1 + ((x - 0.3) / 1.0) ** 2))
    fit = fit_lorentzian_dip(x, y)
    assert fit.center_mhz == pytest.approx(0.3, abs=1e-6)
    assert fit.fwhm_mhz == pytest.approx(2.0, rel=1e-6)
    assert fit.depth == pytest.approx(0.6, rel=1e-6)
    assert fit.baseline == pytest.approx(5.0, rel=1e-6)
    np.testing.assert_allclose(fit.evaluate(x), y, rtol=1e-6)


def test_lorentzian_fit_errors():
    x = np.linspace(-10, 10, 21)
    with pytest.raises(FitError, match="flat"):
        fit_lorentzian_dip(x, np.ones_like(x))
    with pytest.raises(FitError, match="edge"):
        fit_lorentzian_dip(x, 1 + x)
    with pytest.raises(FitError, match="points"):
        fit_lorentzian_dip(x[:5], np.ones(5))


def test_single_exponential_with_offset():
    t = np.arange(0, 200.0)
    fit = fit_decay(t, 3.0 * np.exp(-t / 31.0) + 0.5, 1, fit_offset=True)
    assert fit.taus[0] == pytest.approx(31.0, rel=1e-6)
    assert fit.offset == pytest.approx(0.5, abs=1e-6)
    assert fit.components[0][0] == pytest.approx(3.0, rel=1e-6)


def test_fit_window_sets_reference_time():
    t = np.arange(0, 200.0)
    fit = fit_decay(t, 3.0 * np.exp(-t / 31.0), 1, t_start=5.0, t_stop=150.0, fit_offset=False)
    assert fit.t_ref_ns == 5.0
    assert fit.taus[0] == pytest.approx(31.0, rel=1e-6)
    assert fit.components[0][0] == pytest.approx(3.0 * math.exp(-5.0 / 31.0), rel=1e-6)


def test_double_exponential():
    t = np.arange(0, 1000.0)
    fit = fit_decay(t, 2.0 * np.exp(-t / 10.0) + np.exp(-t / 200.0), 2, fit_offset=False)
    assert fit.taus == pytest.approx((10.0, 200.0), rel=1e-4)
    assert fit.r2 == pytest.approx(1.0)


def test_decay_fit_errors():
    t = np.arange(0, 50.0)
    with pytest.raises(FitError, match="constant"):
        fit_decay(t, np.ones_like(t))
    with pytest.raises(FitError, match="non-positive"):
        fit_decay(t, -np.exp(-t / 5.0), fit_offset=False)
    with pytest.raises(FitError, match="points"):
        fit_decay(t[:5], np.exp(-t[:5]))
    with pytest.raises(ValueError, match="n_components"):
        fit_decay(t, np.exp(-t / 5.0), 3)


def test_fit_exponential_on_trace():
    starts = 2.8 * np.arange(60)
    trace = TimeTrace(starts, 10.0 * np.exp(-starts / 31.0), 2.8)
    fit = fit_exponential(trace, 1, t_start_ns=5.0, fit_offset=False)
    assert fit.taus[0] == pytest.approx(31.0, rel=1e-6)


def test_visibility_decay_pure_exponential():
    t = np.linspace(0, 168, 61)
    fit = fit_visibility_decay(t, 0.9 * np.exp(-t / 120.0))
    assert fit.v0 == pytest.approx(0.9, rel=1e-4)
    assert fit.tau_ns == pytest.approx(120.0, rel=1e-4)
    assert fit.background == pytest.approx(1.0, abs=1e-3)


def test_visibility_decay_with_background():
    t = np.linspace(0, 168, 61)
    v = 0.8 / (1 + 0.3 * np.expm1(t / 60.0))
    fit = fit_visibility_decay(t, v)
    assert fit.tau_ns == pytest.approx(60.0, rel=1e-3)
    assert fit.background == pytest.approx(0.3, rel=1e-3)
    np.testing.assert_allclose(fit.evaluate(t), v, rtol=1e-4)


def test_visibility_decay_needs_decay():
    with pytest.raises(FitError):
        fit_visibility_decay(np.arange(10.0), np.full(10, 0.9))


def test_r_squared():
    y = np.array([1.0, 2.0, 3.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(3, 2.0)) == 0.0


def test_table_csv_keeps_column_order_and_precision(tmp_path):
    table = {"t_ns": np.array([0.0, 2.8]), "counts": np.array([1.0, 1.0 / 3.0])}
    buffer = io.StringIO()
    write_table_csv(buffer, table)
    assert buffer.getvalue().splitlines() == ["t_ns,counts", "0.0,1.0", f"2.8,{1.0 / 3.0!r}"]

    path = tmp_path / "trace.csv"
    write_table_csv(str(path), table)
    assert path.read_text() == buffer.getvalue()

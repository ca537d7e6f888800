import json
import math

import numpy as np
import pytest

from calibration import apply_calibration, calibrate_rates
from experiments import (
    EXPERIMENTS,
    ExperimentResult,
    GridMismatchError,
    analyze,
    exp_cpt,
    exp_mw_to_opt,
    exp_opt_to_mw,
    exp_pumping,
    hyperfine_average,
)
from fluorescence_analysis import FringeData, fit_sinusoid
from master_equation import run_sequence
from pulse_sequences import ProtocolParams, seq_mw_to_opt, seq_opt_to_mw
from sim_config import ExperimentConfig, config_from_dict, config_to_dict

NO_DECOHERENCE = ("physics.decoherence.dephasing_model=none", "physics.decoherence.gamma_mix=0")


def _configure(base, *overrides):
    return config_from_dict(config_to_dict(base), overrides)


def _wrapped(angle):
    return abs(math.atan2(math.sin(angle), math.cos(angle)))


@pytest.fixture(scope="module")
def calibrated():
    cfg = ExperimentConfig()
    return apply_calibration(cfg, calibrate_rates(cfg))


def test_registry_names():
    assert sorted(EXPERIMENTS) == ["cpt", "mw2opt", "opt2mw", "pump"]


def test_mw_to_opt_fringe_follows_theta(calibrated):
    cfg = _configure(
        calibrated,
        "sweep.mw2opt.phase_points=8",
        "sweep.mw2opt.theta_rad=1.0",
        "sweep.mw2opt.optical_readout_ns=100",
        "sweep.mw2opt.window_t0_max_ns=56",
    )
    result = exp_mw_to_opt(cfg)
    assert _wrapped(result.derived["fringe_phase_rad"] - 1.0) < 0.05
    vis = result.tables["visibility_vs_t0"]["visibility"]
    assert result.tables["visibility_vs_t0"]["t0_ns"].size == 21
    assert vis[0] > vis[-1]
    assert set(result.raw) == {"phases", "traces"}
    assert result.meta["manifolds"] == [-1, 0, 1]


def test_mw_to_opt_without_decoherence_is_perfect():
    cfg = _configure(
        ExperimentConfig(),
        *NO_DECOHERENCE,
        "sweep.mw2opt.phase_points=8",
        "sweep.mw2opt.optical_readout_ns=60",
        "sweep.mw2opt.window_t0_max_ns=28",
        "hyperfine_average=false",
    )
    result = exp_mw_to_opt(cfg)
    assert result.derived["fringe_visibility"] == pytest.approx(1.0, abs=1e-4)
    assert result.derived["fringe_r2_cos2_law"] == pytest.approx(1.0, abs=1e-4)
    assert _wrapped(result.derived["phase_max_rad"]) < 1e-9


def test_cpt_dip_and_power_broadening():
    cfg = _configure(ExperimentConfig(), *NO_DECOHERENCE, "hyperfine_average=false")
    result = exp_cpt(cfg)
    assert abs(result.derived["center_mhz"]) < 0.05
    assert result.derived["depth"] >= 0.9
    widths = result.derived["fwhm_mhz_by_rabi"]
    scan = [widths[key] for key in ("10", "20", "27", "40")]
    assert all(later > earlier for earlier, later in zip(scan, scan[1:]))
    assert set(result.raw) == {
        "spectrum",
        "spectrum_rabi_10",
        "spectrum_rabi_20",
        "spectrum_rabi_27",
        "spectrum_rabi_40",
    }
    assert result.tables["spectrum_norm"]["detuning_mhz"].size == 61


def test_pumping_matches_calibrated_decay_times(calibrated):
    result = exp_pumping(calibrated)
    assert result.derived["tau_fast_ns"] == pytest.approx(31.0, abs=0.3)
    assert result.derived["tau_slow_ns"] == pytest.approx(450.0, rel=0.01)
    assert result.raw["trace_on_raman"]["t_ns"].size == 221


def test_opt_to_mw_fringe_and_delay_decay(calibrated):
    cfg = _configure(
        calibrated,
        "sweep.opt2mw.phase_points=8",
        "sweep.opt2mw.phi_opt_rad=0.5",
        "sweep.opt2mw.delay_points=10",
        "sweep.opt2mw.delay_max_ns=1200",
    )
    result = exp_opt_to_mw(cfg)
    assert _wrapped(result.derived["fringe_min_phase_rad"] - 0.5) < 0.05
    assert 0.05 < result.derived["visibility_at_min_delay"] <= 0.2 + 1e-9
    assert result.derived["visibility_tau_ns"] == pytest.approx(600.0, rel=0.05)
    assert result.meta["readout_mode"] == "population"


def test_opt_to_mw_hyperfine_cap_without_decoherence():
    cfg = _configure(
        ExperimentConfig(),
        *NO_DECOHERENCE,
        "sweep.opt2mw.phase_points=8",
        "sweep.opt2mw.delay_points=3",
        "sweep.opt2mw.delay_max_ns=100",
    )
    result = exp_opt_to_mw(cfg)
    assert result.derived["visibility_at_min_delay"] == pytest.approx(0.2, abs=0.005)


def test_opt_to_mw_ey_readout():
    cfg = _configure(
        ExperimentConfig(),
        "sweep.opt2mw.readout_mode=ey_drive",
        "sweep.opt2mw.phase_points=8",
        "sweep.opt2mw.delay_points=3",
        "sweep.opt2mw.delay_max_ns=100",
        "hyperfine_average=false",
    )
    result = exp_opt_to_mw(cfg)
    assert _wrapped(result.derived["fringe_min_phase_rad"]) < 0.05
    assert result.meta["readout_mode"] == "ey_drive"
    assert np.all(result.raw["fringe_raw"]["signal"] > 0)


def _pump_partial(scale, m_i, shift=0.0):
    t = 2.8 * np.arange(900) + shift
    on = scale * (np.exp(-t / 31.0) + 0.05 * np.exp(-t / 300.0))
    off = scale * np.exp(-t / 450.0)
    raw = {
        "trace_on_raman": {"t_ns": t, "counts": on},
        "trace_off_raman": {"t_ns": t, "counts": off},
    }
    return ExperimentResult("pump", raw, meta={"m_i": m_i})


def test_hyperfine_average_weights_in_manifold_order():
    parts = [_pump_partial(1.0, -1), _pump_partial(2.0, 0), _pump_partial(3.0, 1)]
    result = hyperfine_average(parts, (0.25, 0.5, 0.25), ExperimentConfig())
    np.testing.assert_allclose(
        result.raw["trace_off_raman"]["counts"], 2.0 * parts[0].raw["trace_off_raman"]["counts"]
    )
    assert result.meta == {"manifolds": [-1, 0, 1], "weights": [0.25, 0.5, 0.25]}
    assert result.derived["tau_slow_ns"] == pytest.approx(450.0, rel=1e-6)
    assert result.derived["tau_double_ns"] == pytest.approx([31.0, 300.0], rel=1e-4)


def test_hyperfine_average_rejects_mismatched_grids():
    parts = [_pump_partial(1.0, -1), _pump_partial(1.0, 0, shift=1.0), _pump_partial(1.0, 1)]
    with pytest.raises(GridMismatchError, match="grid"):
        hyperfine_average(parts, (1 / 3, 1 / 3, 1 / 3), ExperimentConfig())
    with pytest.raises(GridMismatchError):
        hyperfine_average(parts[:2], (1 / 3, 1 / 3, 1 / 3), ExperimentConfig())


def _noisy_pump_config(workers):
    return _configure(
        ExperimentConfig(),
        "detector.poisson=true",
        "detector.repetitions=100000",
        "seed=7",
        f"workers={workers}",
    )


def test_poisson_runs_are_reproducible(tmp_path):
    first = exp_pumping(_noisy_pump_config(4))
    second = exp_pumping(_noisy_pump_config(4))
    sequential = exp_pumping(_noisy_pump_config(1))
    counts = first.raw["trace_on_raman"]["counts"]
    assert np.all(counts == np.round(counts))
    for name in ("trace_on_raman", "trace_off_raman"):
        np.testing.assert_array_equal(first.raw[name]["counts"], second.raw[name]["counts"])
        np.testing.assert_array_equal(first.raw[name]["counts"], sequential.raw[name]["counts"])

    first.save(str(tmp_path / "a"))
    second.save(str(tmp_path / "b"))
    for name in ("result.json", "trace_on_raman.csv", "trace_off_raman.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_result_directory_layout(tmp_path):
    result = hyperfine_average(
        [_pump_partial(1.0, -1), _pump_partial(1.0, 0), _pump_partial(1.0, 1)],
        (1 / 3, 1 / 3, 1 / 3),
        ExperimentConfig(),
    )
    path = result.save(str(tmp_path))
    payload = json.loads((tmp_path / "result.json").read_text())
    assert path.endswith("result.json")
    assert payload["schema"] == 1
    assert payload["experiment"] == "pump"
    assert payload["tables"] == ["trace_off_raman", "trace_on_raman"]
    assert payload["config"]["schema"] == 1
    assert payload["fits"]["on_raman_single"]["components"][0][1] > 0
    header = (tmp_path / "trace_on_raman.csv").read_text().splitlines()[0]
    assert header == "t_ns,counts"


def test_analysis_can_be_recomputed_from_raw():
    result = hyperfine_average(
        [_pump_partial(1.0, -1), _pump_partial(1.0, 0), _pump_partial(1.0, 1)],
        (1 / 3, 1 / 3, 1 / 3),
        ExperimentConfig(),
    )
    before = dict(result.derived)
    analyze(result, ExperimentConfig())
    assert result.derived == before


def test_mw_to_opt_visibility_decays_with_pumping_time():
    result = exp_mw_to_opt(ExperimentConfig())
    vis = result.tables["visibility_vs_t0"]["visibility"]
    assert result.raw["phases"]["phase_rad"].size == 24
    assert np.all(np.diff(vis) <= 1e-9)
    tau = result.derived["visibility_tau_ns"]
    assert abs(tau - 31.0) / 31.0 < 0.3
    assert 0.0 < result.derived["visibility_v0"] <= 1.0
    assert result.tables["visibility_vs_t0"]["visibility_model"].size == vis.size


def test_mw_to_opt_common_mw_phase_leaves_fringe_unchanged():
    cfg = ExperimentConfig()
    protocol = ProtocolParams(optical_readout_ns=60.0)
    delta = 1.3
    for phi_opt in (0.0, 1.0, 2.5):
        base = run_sequence(seq_mw_to_opt(0.0, 0.0, phi_opt, 0.0, protocol), params=cfg.decoherence)
        moved = run_sequence(seq_mw_to_opt(delta, delta, phi_opt, 0.0, protocol), params=cfg.decoherence)
        np.testing.assert_allclose(moved.populations(), base.populations(), atol=1e-9)


def _opt2mw_fringe(phases, phi_plus_offset, phi_minus_offset):
    cfg = ExperimentConfig()
    signals = []
    for phi in phases:
        seq = seq_opt_to_mw((0.6, 0.0), (phi + phi_plus_offset, phi_minus_offset), 0.0, ProtocolParams())
        signals.append(run_sequence(seq, params=cfg.decoherence).final_state().population("G0"))
    return np.array(signals)


def test_opt_to_mw_mw_phase_covariance():
    phases = 2 * math.pi * np.arange(8) / 8
    delta = 0.9
    base = _opt2mw_fringe(phases, 0.0, 0.0)
    common = _opt2mw_fringe(phases, delta, delta)
    np.testing.assert_allclose(common, base, atol=1e-9)

    base_fit = fit_sinusoid(FringeData(phases, base))
    plus_fit = fit_sinusoid(FringeData(phases, _opt2mw_fringe(phases, delta, 0.0)))
    minus_fit = fit_sinusoid(FringeData(phases, _opt2mw_fringe(phases, 0.0, delta)))
    assert _wrapped(plus_fit.phase0 - base_fit.phase0 + delta) < 1e-6
    assert _wrapped(minus_fit.phase0 - base_fit.phase0 - delta) < 1e-6
    assert plus_fit.visibility == pytest.approx(base_fit.visibility, rel=1e-6)

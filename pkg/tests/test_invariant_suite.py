import math
from dataclasses import replace

import pytest

from invariant_suite import CHECKS, CheckResult, InvariantReport, run_invariant_suite
from master_equation import IntegratorConfig
from sim_config import ExperimentConfig


@pytest.fixture(scope="module")
def default_report():
    return run_invariant_suite()


def test_default_configuration_passes_every_check(default_report):
    assert default_report.passed, [
        (r.name, r.residual, r.threshold, r.detail) for r in default_report.failures()
    ]
    assert default_report.summary() == f"checks passed: {len(CHECKS)}/{len(CHECKS)}"


def test_results_follow_registration_order(default_report):
    assert [r.name for r in default_report.results] == [name for name, _ in CHECKS]
    assert all(r.residual <= r.threshold for r in default_report.results)


def test_report_is_reproducible(default_report):
    again = run_invariant_suite(ExperimentConfig())
    assert again.to_dict() == default_report.to_dict()


def test_coarse_step_is_reported_not_raised():
    cfg = replace(ExperimentConfig(), integrator=IntegratorConfig(dt_ns=10.0))
    report = run_invariant_suite(cfg)
    by_name = {r.name: r for r in report.results}
    failed = by_name["convergence_halving_dt"]
    assert not report.passed
    assert not failed.passed
    assert math.isinf(failed.residual)
    assert failed.detail.startswith("StepSizeError")
    # checks that never integrate still pass
    assert by_name["optical_dark_state"].passed
    assert by_name["sequence_json_round_trip"].passed


def test_report_helpers():
    report = InvariantReport([
        CheckResult("a", True, 0.0, 1e-9),
        CheckResult("b", False, 1.0, 1e-9, "too large"),
    ])
    assert report.n_passed == 1
    assert not report.passed
    assert [r.name for r in report.failures()] == ["b"]
    assert report.summary() == "checks passed: 1/2"
    payload = report.to_dict()
    assert payload["passed"] is False
    assert payload["checks"][1]["detail"] == "too large"


@pytest.mark.parametrize(
    "name",
    [
        "hamiltonian_hermiticity",
        "phase_covariance",
        "hamiltonian_linearity",
        "decomposition_shift_invariance",
        "dephasing_keeps_diagonal",
        "rate_equation_oracle",
        "static_vs_lindblad_1e",
        "builder_purity",
        "mw_to_opt_duration",
    ],
)
def test_structural_checks_are_registered_and_pass(default_report, name):
    by_name = {r.name: r for r in default_report.results}
    assert by_name[name].passed, (by_name[name].residual, by_name[name].threshold, by_name[name].detail)


def test_mw_to_opt_duration_reports_the_sequence_length(default_report):
    by_name = {r.name: r for r in default_report.results}
    # pi/2 + pi at 0.91 MHz plus the 150 ns optical readout
    assert by_name["mw_to_opt_duration"].residual == pytest.approx(274.7 + 549.5 + 150.0, abs=0.5)
    assert by_name["mw_to_opt_duration"].threshold == 2000.0

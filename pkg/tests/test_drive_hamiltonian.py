import math

import numpy as np
import pytest
from scipy.linalg import expm

from drive_hamiltonian import (
    DriveConfigError,
    DriveField,
    HamiltonianSpec,
    NuclearLabel,
    build_hamiltonian,
    check_fields,
    max_frequency,
    mw_bright_state,
    mw_dark_state,
    mw_pair,
    nuclear_manifolds,
    optical_pair,
    raman_detuning,
    transition_name,
)
from nv_levels import (
    IDX_A2,
    IDX_G0,
    IDX_GM,
    IDX_GP,
    DensityMatrix,
    bright_state,
    dark_bright_decompose,
    dark_state,
)
from sim_defaults import mhz_to_rad_per_ns


def test_field_coupling_element():
    h = build_hamiltonian(HamiltonianSpec((DriveField.on("GP-A2", 27.0, 0.0, 0.8),)))
    omega = mhz_to_rad_per_ns(27.0)
    assert h[IDX_GP, IDX_A2] == pytest.approx(0.5 * omega * np.exp(0.8j))
    assert h[IDX_A2, IDX_GP] == pytest.approx(0.5 * omega * np.exp(-0.8j))


@pytest.mark.parametrize("phi_plus, phi_minus", [(0.0, 0.0), (1.1, 0.4), (-2.0, 3.0)])
def test_optical_pair_annihilates_dark_state(phi_plus, phi_minus):
    h = build_hamiltonian(HamiltonianSpec(optical_pair(27.0, phi_plus, phi_minus)))
    assert np.allclose(h, h.conj().T)
    assert np.linalg.norm(h @ dark_state(phi_plus - phi_minus).amplitudes) < 1e-12


def test_mw_pair_annihilates_mw_dark_state():
    h = build_hamiltonian(HamiltonianSpec(mw_pair(0.91, 0.3, -1.2)))
    assert np.linalg.norm(h @ mw_dark_state(1.5).amplitudes) < 1e-12


def test_raman_detuning_sets_two_photon_offset():
    h = build_hamiltonian(HamiltonianSpec(optical_pair(27.0, raman_mhz=5.0)))
    offset = (h[IDX_GP, IDX_GP] - h[IDX_GM, IDX_GM]).real
    assert abs(offset) == pytest.approx(mhz_to_rad_per_ns(5.0))
    assert raman_detuning(*optical_pair(27.0, raman_mhz=5.0)) == pytest.approx(5.0)


def test_hyperfine_shift_detunes_mw_lines():
    fields = (DriveField.on("G0-GM", 0.91),)
    h = build_hamiltonian(HamiltonianSpec(fields, hyperfine_mhz=2.2, nuclear=NuclearLabel(1, 1.0)))
    assert abs((h[IDX_GM, IDX_GM] - h[IDX_G0, IDX_G0]).real) == pytest.approx(mhz_to_rad_per_ns(2.2))

    h0 = build_hamiltonian(HamiltonianSpec(fields, hyperfine_mhz=2.2, nuclear=NuclearLabel(0, 1.0)))
    assert np.allclose(np.diag(h0), 0.0)


def test_ideal_selectivity_drops_off_resonant_manifolds():
    spec = HamiltonianSpec(
        mw_pair(0.91), nuclear=NuclearLabel(-1, 1.0), hyperfine_selectivity="ideal"
    )
    assert np.allclose(build_hamiltonian(spec), 0.0)


def test_hamiltonian_is_hermitian_for_mixed_fields():
    fields = mw_pair(0.91, 0.2, 0.1) + (DriveField.on("G0-EY", 27.0, 1.5, 0.3),)
    h = build_hamiltonian(HamiltonianSpec(fields, nuclear=NuclearLabel(1, 1.0), spin_detuning_mhz=0.4))
    assert np.allclose(h, h.conj().T)


def test_max_frequency():
    h = build_hamiltonian(HamiltonianSpec(optical_pair(27.0)))
    assert max_frequency(h) == pytest.approx(mhz_to_rad_per_ns(27.0))


def test_disallowed_transition():
    with pytest.raises(DriveConfigError, match="allowed"):
        transition_name("G0-A2")
    with pytest.raises(DriveConfigError):
        DriveField(("GM", "GP"), 1.0)


def test_invalid_field_values():
    with pytest.raises(DriveConfigError, match="rabi_mhz"):
        DriveField.on("G0-GM", -1.0)
    with pytest.raises(DriveConfigError, match="phase_rad"):
        DriveField.on("G0-GM", 1.0, phase_rad="x")


def test_duplicate_fields_rejected():
    with pytest.raises(DriveConfigError, match="duplicate"):
        check_fields((DriveField.on("G0-GM", 1.0), DriveField.on("G0-GM", 2.0)))


def test_inconsistent_loop_rejected():
    fields = (
        DriveField.on("G0-GM", 0.91, 1.0),
        DriveField.on("G0-GP", 0.91),
        DriveField.on("GM-A2", 27.0),
        DriveField.on("GP-A2", 27.0),
    )
    with pytest.raises(DriveConfigError, match="loop"):
        build_hamiltonian(HamiltonianSpec(fields))


def test_consistent_loop_accepted():
    fields = mw_pair(0.91) + optical_pair(27.0)
    h = build_hamiltonian(HamiltonianSpec(fields))
    assert np.allclose(np.diag(h), 0.0)


def test_nuclear_manifolds():
    manifolds = nuclear_manifolds()
    assert [m.m_i for m in manifolds] == [-1, 0, 1]
    assert sum(m.weight for m in manifolds) == pytest.approx(1.0)
    with pytest.raises(DriveConfigError):
        nuclear_manifolds((0.5, 0.5, 0.5))
    with pytest.raises(DriveConfigError):
        NuclearLabel(2)


def test_transition_name_accepts_pairs():
    assert transition_name(("G0", "GP")) == "G0-GP"
    assert DriveField.on("GM-A2", 1.0).spin_end == "GM"
    assert DriveField.on("G0-GM", 1.0).is_microwave
    assert not DriveField.on("G0-EY", 1.0).is_microwave
    assert math.isclose(DriveField.on("G0-GM", 0.91).rabi_rad_per_ns, 2 * math.pi * 0.91e-3)


def test_mw_dark_and_bright_states_are_orthogonal():
    for phi in (0.0, 0.7, -2.5):
        dark, bright = mw_dark_state(phi), mw_bright_state(phi)
        assert abs(dark.overlap(bright)) < 1e-14
        h = build_hamiltonian(HamiltonianSpec(mw_pair(0.91, phi, 0.0)))
        assert np.linalg.norm(h @ bright.amplitudes) == pytest.approx(
            math.sqrt(2.0) * 0.5 * mhz_to_rad_per_ns(0.91)
        )


def _phase_rotation(index, delta):
    frame = np.eye(5, dtype=complex)
    frame[index, index] = np.exp(-1j * delta)
    return frame


@pytest.mark.parametrize(
    "pair, rabi, shared",
    [(optical_pair, 27.0, IDX_A2), (mw_pair, 0.91, IDX_G0)],
)
def test_common_phase_shift_rotates_the_shared_level(pair, rabi, shared):
    delta = 0.83
    h = build_hamiltonian(HamiltonianSpec(pair(rabi, 1.1, 0.4)))
    shifted = build_hamiltonian(HamiltonianSpec(pair(rabi, 1.1 + delta, 0.4 + delta)))
    frame = _phase_rotation(shared, delta)
    np.testing.assert_allclose(shifted, frame @ h @ frame.conj().T, atol=1e-12)

    # the frame leaves GM/GP untouched, so dark and bright weights carry over
    state = bright_state(0.3).amplitudes
    before = frame @ (h @ state)
    after = shifted @ (frame @ state)
    np.testing.assert_allclose(after, before, atol=1e-12)


def test_common_optical_phase_keeps_dark_weight_after_evolution():
    state = bright_state(0.2).amplitudes
    weights = []
    for delta in (0.0, 1.4):
        h = build_hamiltonian(HamiltonianSpec(optical_pair(27.0, 0.9 + delta, 0.1 + delta)))
        evolved = expm(-1j * h * 35.0) @ state
        rho = np.outer(evolved, evolved.conj())
        weights.append(np.array(dark_bright_decompose(DensityMatrix(rho, validate=False), 0.8)))
    np.testing.assert_allclose(weights[1], weights[0], atol=1e-12)


@pytest.mark.parametrize(
    "first, second",
    [
        (optical_pair(27.0, 0.4, -1.0, 3.0), (DriveField.on("G0-EY", 27.0, -2.0, 0.5),)),
        (mw_pair(0.91, 1.2, 0.3), optical_pair(27.0, -0.7, 0.9)),
        (mw_pair(0.91, 0.1, 2.0), (DriveField.on("G0-EY", 27.0, 0.0, 1.4),)),
    ],
)
def test_hamiltonian_is_linear_in_disjoint_fields(first, second):
    joint = build_hamiltonian(HamiltonianSpec(first + second))
    split = build_hamiltonian(HamiltonianSpec(first)) + build_hamiltonian(HamiltonianSpec(second))
    np.testing.assert_allclose(joint, split, atol=1e-12)

# nv-lambda/tests/test_quantum.py
from __future__ import annotations

import math

import numpy as np
import pytest

from nv_lambda.errors import InvariantError
from nv_lambda.lindblad import LambdaParams, build_hamiltonian
from nv_lambda.quantum import (
    L,
    PLUS1,
    R,
    ZERO,
    BlochVector,
    DensityMatrix,
    StateVector,
    bloch_fidelity,
    bloch_from_spherical,
    bloch_vector,
    bright_state,
    conditional_fidelity,
    dark_state,
    fidelity,
    ground_state_from_bloch,
    ground_unitary,
    spherical_from_bloch,
)

ANGLES = [(t, p) for t in np.linspace(0.0, math.pi, 16) for p in np.linspace(0.0, 2.0 * math.pi, 16)]


@pytest.mark.parametrize("branch, excited", [("R", R), ("L", L)])
def test_dark_state_is_decoupled_from_its_branch(branch, excited):
    for theta, phi in ANGLES:
        h = build_hamiltonian(LambdaParams(omega=46.5, theta=theta, phi=phi, delta_e1=180.0))
        d = dark_state(theta, phi, branch).amplitudes
        assert abs(h[excited] @ d) < 1e-12


def test_bright_state_is_orthogonal_and_coupled():
    h = build_hamiltonian(LambdaParams(omega=10.0, theta=1.2, phi=0.7))
    d = dark_state(1.2, 0.7).amplitudes
    b = bright_state(1.2, 0.7).amplitudes
    assert abs(np.vdot(d, b)) < 1e-12
    assert abs(h[R] @ b) == pytest.approx(10.0)


def test_dark_state_bloch_direction():
    theta, phi = 1.708, 0.395
    b = bloch_vector(DensityMatrix.from_state(dark_state(theta, phi))).as_array()
    expected = [-math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
    assert np.allclose(b, expected, atol=1e-12)


def test_basis_states_sit_on_the_poles():
    assert bloch_vector(DensityMatrix.basis(ZERO)).as_array().tolist() == [0.0, 0.0, 1.0]
    assert bloch_vector(DensityMatrix.basis(PLUS1)).as_array().tolist() == [0.0, 0.0, -1.0]
    assert bloch_vector(DensityMatrix.maximally_mixed_ground()).r == pytest.approx(0.0)


def test_density_matrix_rejects_bad_input():
    bad = np.zeros((5, 5), dtype=complex)
    bad[ZERO, ZERO] = 0.5
    with pytest.raises(InvariantError):
        DensityMatrix(bad)
    bad[PLUS1, PLUS1] = 0.5
    bad[ZERO, PLUS1] = 0.1
    with pytest.raises(InvariantError, match="Hermitian"):
        DensityMatrix(bad)


def test_project_clamps_tiny_negative_eigenvalues():
    mat = np.zeros((5, 5), dtype=complex)
    mat[ZERO, ZERO] = 1.0 + 1e-10
    mat[PLUS1, PLUS1] = -1e-10
    rho = DensityMatrix.project(mat)
    assert rho.populations[PLUS1] == pytest.approx(0.0, abs=1e-15)
    assert np.trace(rho.data).real == pytest.approx(1.0, abs=1e-14)


def test_project_refuses_real_negativity():
    mat = np.zeros((5, 5), dtype=complex)
    mat[ZERO, ZERO] = 1.1
    mat[PLUS1, PLUS1] = -0.1
    with pytest.raises(InvariantError, match="negative eigenvalue"):
        DensityMatrix.project(mat)


def test_state_vector_requires_unit_norm():
    with pytest.raises(InvariantError):
        StateVector(np.array([1, 1, 0, 0, 0], dtype=complex))
    psi = StateVector.normalized([1, 1j, 0, 0, 0])
    assert np.linalg.norm(psi.amplitudes) == pytest.approx(1.0)


def test_fidelity_of_pure_state_with_itself():
    psi = dark_state(0.4, 2.0)
    assert fidelity(DensityMatrix.from_state(psi), psi) == pytest.approx(1.0)
    assert fidelity(DensityMatrix.from_state(psi), bright_state(0.4, 2.0)) == pytest.approx(0.0, abs=1e-15)


def test_conditional_fidelity_ignores_excited_population():
    psi = dark_state(1.0, 0.3)
    mat = 0.6 * DensityMatrix.from_state(psi).data
    mat[R, R] = 0.4
    rho = DensityMatrix(mat)
    assert fidelity(rho, psi) == pytest.approx(0.6)
    assert conditional_fidelity(rho, psi) == pytest.approx(1.0)


def test_conditional_fidelity_needs_ground_target_and_population():
    with pytest.raises(InvariantError, match="ground-subspace"):
        conditional_fidelity(DensityMatrix.basis(ZERO), StateVector.basis(R))
    with pytest.raises(InvariantError, match="no population"):
        conditional_fidelity(DensityMatrix.basis(R), dark_state(1.0, 0.0))


def test_spherical_roundtrip():
    b = bloch_from_spherical(0.64, 0.164, 2.526)
    assert b.r == pytest.approx(0.64)
    r, theta, phi = spherical_from_bloch(b)
    assert (r, theta, phi) == pytest.approx((0.64, 0.164, 2.526))
    assert spherical_from_bloch(BlochVector(0.0, 0.0, 0.0)) == (0.0, 0.0, 0.0)


def test_ground_state_from_bloch_keeps_the_vector():
    b = np.array([0.3, -0.2, 0.5])
    assert np.allclose(bloch_vector(ground_state_from_bloch(b)).as_array(), b, atol=1e-12)


def test_bloch_vector_longer_than_one_is_rejected():
    with pytest.raises(InvariantError):
        BlochVector(1.0, 0.5, 0.0)


def test_bloch_fidelity_grows_with_length():
    assert bloch_fidelity(np.zeros(3)) == 0.5
    assert bloch_fidelity(BlochVector(0.0, 0.6, 0.0)) == pytest.approx(0.8)
    assert bloch_fidelity(np.array([0.0, 0.0, 1.0])) == 1.0


def test_ground_unitary_pi_about_x_flips_the_spin():
    u = ground_unitary((1.0, 0.0, 0.0), math.pi)
    assert np.allclose(u.conj().T @ u, np.eye(2))
    out = u @ np.array([1.0, 0.0])
    assert abs(out[1]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ground_unitary((0.0, 0.0, 0.0), 1.0)


def test_unknown_branch_is_rejected():
    with pytest.raises(ValueError):
        dark_state(1.0, 0.0, "both")  # type: ignore[arg-type]


def _random_pure(rng: np.random.Generator) -> DensityMatrix:
    return DensityMatrix.from_state(StateVector.normalized(rng.normal(size=5) + 1j * rng.normal(size=5)))


def test_bloch_vector_is_linear_in_rho():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b = _random_pure(rng), _random_pure(rng)
        w = rng.uniform()
        mixed = bloch_vector(w * a.data + (1 - w) * b.data).as_array()
        expected = w * bloch_vector(a).as_array() + (1 - w) * bloch_vector(b).as_array()
        assert mixed == pytest.approx(expected, abs=1e-12)


def test_fidelity_ignores_a_global_phase():
    rng = np.random.default_rng(4)
    rho = _random_pure(rng)
    psi = StateVector.normalized(rng.normal(size=5) + 1j * rng.normal(size=5))
    for chi in rng.uniform(0, 2 * math.pi, 5):
        shifted = StateVector(np.exp(1j * chi) * psi.amplitudes)
        assert fidelity(rho, shifted) == pytest.approx(fidelity(rho, psi), abs=1e-12)


def test_mixed_ground_state_has_half_fidelity_with_any_ground_state():
    rng = np.random.default_rng(5)
    mixed = DensityMatrix.maximally_mixed_ground()
    for _ in range(10):
        amps = np.zeros(5, dtype=complex)
        amps[[ZERO, PLUS1]] = rng.normal(size=2) + 1j * rng.normal(size=2)
        assert fidelity(mixed, StateVector.normalized(amps)) == pytest.approx(0.5, abs=1e-12)


def test_zero_state_against_the_equatorial_dark_state():
    assert fidelity(DensityMatrix.basis(ZERO), dark_state(math.pi / 2, 0.0, "R")) == pytest.approx(0.5, abs=1e-12)

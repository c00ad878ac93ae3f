# nv-lambda/src/nv_lambda/quantum.py
"""
States and Bloch-sphere algebra on the five-level space {|+1_g>, |0_g>, |R_e1>, |L_e1>, |S>}.

The qubit is the ground pair. Whenever a 2x2 qubit matrix appears it is ordered (|0_g>, |+1_g>),
which makes sigma_z = |0_g><0_g| - |+1_g><+1_g| the usual diag(1, -1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence, Union

import numpy as np

from .errors import InvariantError

DIM = 5
PLUS1, ZERO, R, L, S = range(DIM)
GROUND = (ZERO, PLUS1)
EXCITED = (R, L)

Branch = Literal["R", "L"]

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
PSD_TOL = 1e-9

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(DIM)
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-12:
            raise InvariantError(f"state vector norm {norm:.15f} differs from 1")

    @classmethod
    def normalized(cls, amplitudes: Sequence[complex] | np.ndarray) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).reshape(DIM)
        norm = np.linalg.norm(amps)
        if norm == 0:
            raise InvariantError("cannot normalize the zero vector")
        return cls(amps / norm)

    @classmethod
    def basis(cls, index: int) -> "StateVector":
        amps = np.zeros(DIM, dtype=complex)
        amps[index] = 1.0
        return cls(amps)


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite 5x5 matrix. Construction validates."""

    data: np.ndarray

    def __post_init__(self) -> None:
        mat = np.array(self.data, dtype=complex).reshape(DIM, DIM)
        mat.setflags(write=False)
        object.__setattr__(self, "data", mat)
        herm = np.max(np.abs(mat - mat.conj().T))
        if herm > HERMITIAN_TOL:
            raise InvariantError(f"density matrix not Hermitian (max deviation {herm:.3e})")
        tr = np.trace(mat)
        if abs(tr - 1.0) > TRACE_TOL:
            raise InvariantError(f"density matrix trace {tr.real:.12f} differs from 1")
        lam_min = float(np.linalg.eigvalsh(mat)[0])
        if lam_min < -PSD_TOL:
            raise InvariantError(f"density matrix not positive semidefinite (min eigenvalue {lam_min:.3e})")

    @classmethod
    def project(cls, mat: np.ndarray, tol: float = 1e-8) -> "DensityMatrix":
        """Hermitize, clamp eigenvalues down to -tol, renormalize the trace."""
        mat = np.asarray(mat, dtype=complex).reshape(DIM, DIM)
        mat = 0.5 * (mat + mat.conj().T)
        lam, vecs = np.linalg.eigh(mat)
        if lam[0] < -tol:
            raise InvariantError(f"negative eigenvalue {lam[0]:.3e} beyond tolerance {tol:.0e}")
        if lam[0] < 0:
            lam = np.clip(lam, 0.0, None)
            mat = (vecs * lam) @ vecs.conj().T
            mat = 0.5 * (mat + mat.conj().T)
        tr = np.trace(mat).real
        if tr <= 0:
            raise InvariantError("density matrix has no population left")
        return cls(mat / tr)

    @classmethod
    def from_state(cls, psi: StateVector) -> "DensityMatrix":
        return cls(np.outer(psi.amplitudes, psi.amplitudes.conj()))

    @classmethod
    def basis(cls, index: int) -> "DensityMatrix":
        mat = np.zeros((DIM, DIM), dtype=complex)
        mat[index, index] = 1.0
        return cls(mat)

    @classmethod
    def from_ground_populations(cls, p_zero: float, p_plus1: float) -> "DensityMatrix":
        mat = np.zeros((DIM, DIM), dtype=complex)
        mat[ZERO, ZERO] = p_zero
        mat[PLUS1, PLUS1] = p_plus1
        return cls.project(mat)

    @classmethod
    def maximally_mixed_ground(cls) -> "DensityMatrix":
        return cls.from_ground_populations(0.5, 0.5)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.data)).copy()

    @property
    def ground_population(self) -> float:
        return float(self.data[ZERO, ZERO].real + self.data[PLUS1, PLUS1].real)

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.data @ self.data)))

    def vec(self) -> np.ndarray:
        return self.data.reshape(DIM * DIM).copy()


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if self.r > 1.0 + 1e-9:
            raise InvariantError(f"Bloch vector length {self.r:.12f} exceeds 1")

    @property
    def r(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_array(cls, b: Sequence[float] | np.ndarray) -> "BlochVector":
        x, y, z = (float(v) for v in b)
        return cls(x, y, z)


def _as_matrix(rho: Union[DensityMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.data
    mat = np.asarray(rho, dtype=complex).reshape(DIM, DIM)
    herm = np.max(np.abs(mat - mat.conj().T))
    if herm > HERMITIAN_TOL:
        raise InvariantError(f"input not Hermitian (max deviation {herm:.3e})")
    return mat


def bloch_vector(rho: Union[DensityMatrix, np.ndarray]) -> BlochVector:
    mat = _as_matrix(rho)
    c = mat[ZERO, PLUS1]
    return BlochVector(
        x=float(2.0 * c.real),
        y=float(-2.0 * c.imag),
        z=float(mat[ZERO, ZERO].real - mat[PLUS1, PLUS1].real),
    )


def bloch_array(mats: np.ndarray) -> np.ndarray:
    """Bloch coordinates for a stack of 5x5 matrices, shape (..., 3)."""
    c = mats[..., ZERO, PLUS1]
    return np.stack(
        [2.0 * c.real, -2.0 * c.imag, mats[..., ZERO, ZERO].real - mats[..., PLUS1, PLUS1].real],
        axis=-1,
    )


def dark_state(theta: float, phi: float, branch: Branch = "R") -> StateVector:
    """Ground superposition decoupled from the drive of `branch`."""
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    amps = np.zeros(DIM, dtype=complex)
    amps[ZERO] = c
    if branch == "R":
        amps[PLUS1] = -np.exp(-1j * phi) * s
    elif branch == "L":
        amps[PLUS1] = np.exp(-1j * phi) * s
    else:
        raise ValueError(f"branch must be 'R' or 'L', got {branch!r}")
    return StateVector.normalized(amps)


def bright_state(theta: float, phi: float, branch: Branch = "R") -> StateVector:
    """Ground state orthogonal to dark_state(theta, phi, branch)."""
    d = dark_state(theta, phi, branch).amplitudes
    amps = np.zeros(DIM, dtype=complex)
    amps[ZERO] = -np.conj(d[PLUS1])
    amps[PLUS1] = np.conj(d[ZERO])
    return StateVector.normalized(amps)


def fidelity(rho: Union[DensityMatrix, np.ndarray], psi: StateVector) -> float:
    mat = _as_matrix(rho)
    v = psi.amplitudes
    f = complex(v.conj() @ mat @ v)
    if abs(f.imag) > 1e-9:
        raise InvariantError(f"fidelity has imaginary part {f.imag:.3e}; state is corrupted")
    val = f.real
    if val < -1e-9 or val > 1.0 + 1e-9:
        raise InvariantError(f"fidelity {val:.12f} outside [0, 1]")
    return min(max(val, 0.0), 1.0)


def conditional_fidelity(rho: Union[DensityMatrix, np.ndarray], psi: StateVector) -> float:
    """Fidelity of the state conditioned on the spin being in the qubit subspace."""
    mat = _as_matrix(rho)
    if np.max(np.abs(np.delete(psi.amplitudes, list(GROUND)))) > 1e-12:
        raise InvariantError("conditional fidelity needs a ground-subspace target")
    pg = float(mat[ZERO, ZERO].real + mat[PLUS1, PLUS1].real)
    if pg < 1e-12:
        raise InvariantError("no population in the ground subspace")
    return min(fidelity(mat, psi) / pg, 1.0)


def bloch_fidelity(b: BlochVector | np.ndarray) -> float:
    """Fidelity between the mixed qubit state b and the pure state along b/|b|."""
    r = b.r if isinstance(b, BlochVector) else float(np.linalg.norm(b))
    return 0.5 * (1.0 + min(r, 1.0))


def bloch_from_spherical(r: float, theta: float, phi: float) -> BlochVector:
    st = math.sin(theta)
    return BlochVector(r * st * math.cos(phi), r * st * math.sin(phi), r * math.cos(theta))


def spherical_from_bloch(b: BlochVector) -> tuple[float, float, float]:
    r = min(b.r, 1.0)
    if r == 0.0:
        return 0.0, 0.0, 0.0
    theta = math.acos(max(-1.0, min(1.0, b.z / r)))
    phi = math.atan2(b.y, b.x) % (2.0 * math.pi)
    return r, theta, phi


def qubit_density(b: BlochVector | np.ndarray) -> np.ndarray:
    """2x2 qubit matrix 1/2 (I + b.sigma) in (|0_g>, |+1_g>) order."""
    x, y, z = b.as_array() if isinstance(b, BlochVector) else np.asarray(b, dtype=float)
    return 0.5 * (np.eye(2) + x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z)


def embed_qubit(block: np.ndarray) -> np.ndarray:
    mat = np.zeros((DIM, DIM), dtype=complex)
    idx = list(GROUND)
    mat[np.ix_(idx, idx)] = block
    return mat


def ground_state_from_bloch(b: BlochVector | np.ndarray) -> DensityMatrix:
    return DensityMatrix.project(embed_qubit(qubit_density(b)))


def ground_unitary(axis: Sequence[float] | np.ndarray, angle: float) -> np.ndarray:
    """exp(-i (n.sigma) angle/2) for the unit vector along `axis`."""
    n = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("rotation axis must be nonzero")
    n = n / norm
    ns = n[0] * SIGMA_X + n[1] * SIGMA_Y + n[2] * SIGMA_Z
    return math.cos(angle / 2.0) * np.eye(2, dtype=complex) - 1j * math.sin(angle / 2.0) * ns


def embed_ground_unitary(u: np.ndarray) -> np.ndarray:
    """Lift a qubit unitary to the five-level space, identity on the other levels."""
    full = np.eye(DIM, dtype=complex)
    idx = list(GROUND)
    full[np.ix_(idx, idx)] = u
    return full

# nv-lambda/src/nv_lambda/lindblad.py
"""
Rotating-frame Hamiltonian, Lindblad superoperator and time propagation.

Density matrices are vectorized row-major (vec(rho) = rho.reshape(25)), so
vec(A rho B) = (A kron B^T) vec(rho).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.linalg import expm

from .errors import ConvergenceError, InvariantError
from .logging_cfg import get_logger
from .quantum import (
    DIM,
    EXCITED,
    L,
    PAULIS,
    PLUS1,
    R,
    S,
    ZERO,
    DensityMatrix,
    StateVector,
    conditional_fidelity,
    embed_qubit,
    fidelity,
)
from .units import Angle, AngularFrequency, Rate

log = get_logger(__name__)

NULL_TOL = 1e-8
COND_LIMIT = 1e8
RESIDUAL_TOL = 1e-7
_EYE = np.eye(DIM, dtype=complex)
_TRACE_ROW = _EYE.reshape(DIM * DIM)


class LambdaParams(BaseModel):
    """Drive and level parameters; frequencies in rad/µs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    delta_L: AngularFrequency = 0.0
    delta_e1: AngularFrequency = Field(default=0.0, ge=0.0)
    omega: AngularFrequency = Field(default=0.0, ge=0.0)
    theta: Angle = 0.0
    phi: Angle = 0.0
    epsilon_S: AngularFrequency = 0.0
    branch: Literal["both", "R", "L"] = "both"
    two_photon_detuning: AngularFrequency = 0.0


class DecayRates(BaseModel):
    """Incoherent rates in 1/µs. `branching` splits the singlet decay into (|0_g>, |+1_g>)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma_rad: Rate = Field(default=0.0, ge=0.0)
    gamma_isc: Rate = Field(default=0.0, ge=0.0)
    gamma_isc_back: Rate = Field(default=0.0, ge=0.0)
    branching: Tuple[float, float] = (1.0, 0.0)
    gamma_1: Rate = Field(default=0.0, ge=0.0)
    gamma_phi: Rate = Field(default=0.0, ge=0.0)

    @field_validator("branching")
    @classmethod
    def validate_branching(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if min(v) < 0 or abs(sum(v) - 1.0) > 1e-12:
            raise ValueError(f"singlet branching must be nonnegative and sum to 1, got {v}")
        return v


@dataclass(frozen=True)
class Superoperator:
    matrix: np.ndarray
    hamiltonian: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (DIM * DIM, DIM * DIM):
            raise InvariantError(f"superoperator must be 25x25, got {mat.shape}")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        leak = np.max(np.abs(_TRACE_ROW @ mat))
        scale = max(1.0, float(np.max(np.abs(mat))))
        if leak > 1e-10 * scale:
            raise InvariantError(f"superoperator does not preserve trace (leak {leak:.3e})")

    def apply(self, rho: DensityMatrix | np.ndarray) -> np.ndarray:
        mat = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
        return (self.matrix @ mat.reshape(DIM * DIM)).reshape(DIM, DIM)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)


def build_hamiltonian(p: LambdaParams) -> np.ndarray:
    h = np.zeros((DIM, DIM), dtype=complex)
    h[PLUS1, PLUS1] = p.delta_L + p.two_photon_detuning
    h[ZERO, ZERO] = p.delta_L
    h[R, R] = 0.0
    h[L, L] = -p.delta_e1
    h[S, S] = p.epsilon_S

    c = p.omega * math.cos(p.theta / 2.0)
    s = p.omega * math.sin(p.theta / 2.0) * np.exp(1j * p.phi)
    if p.branch in ("both", "R"):
        h[PLUS1, R] = c
        h[ZERO, R] = s
    if p.branch in ("both", "L"):
        h[PLUS1, L] = c
        h[ZERO, L] = -s
    # Hermitian completion of the upper couplings
    for g in (PLUS1, ZERO):
        for e in EXCITED:
            h[e, g] = np.conj(h[g, e])
    return h


def _jump(target: int, source: int) -> np.ndarray:
    op = np.zeros((DIM, DIM), dtype=complex)
    op[target, source] = 1.0
    return op


def jump_operators(rates: DecayRates) -> List[Tuple[float, np.ndarray]]:
    """(rate, operator) pairs. The reverse ground flip |0_g> -> |+1_g> is absent."""
    to_zero, to_plus1 = rates.branching
    ops: List[Tuple[float, np.ndarray]] = []
    for e in EXCITED:
        ops.append((rates.gamma_rad, _jump(PLUS1, e)))
        ops.append((rates.gamma_rad, _jump(ZERO, e)))
        ops.append((rates.gamma_isc, _jump(S, e)))
    ops.append((rates.gamma_isc_back * to_zero, _jump(ZERO, S)))
    ops.append((rates.gamma_isc_back * to_plus1, _jump(PLUS1, S)))
    ops.append((rates.gamma_1, _jump(ZERO, PLUS1)))
    ops.append((rates.gamma_phi, _jump(ZERO, ZERO)))
    return [(g, op) for g, op in ops if g > 0.0]


def build_lindbladian(h: np.ndarray, rates: DecayRates) -> Superoperator:
    h = np.asarray(h, dtype=complex)
    if np.max(np.abs(h - h.conj().T)) > 1e-12:
        raise InvariantError("Hamiltonian is not Hermitian")
    w = -1j * np.kron(h, _EYE) + 1j * np.kron(_EYE, h.T)
    for g, op in jump_operators(rates):
        ld = op.conj().T @ op
        w += g * (np.kron(op, op.conj()) - 0.5 * np.kron(ld, _EYE) - 0.5 * np.kron(_EYE, ld.T))
    return Superoperator(w, hamiltonian=h)


def build_superoperator(params: LambdaParams, rates: DecayRates) -> Superoperator:
    return build_lindbladian(build_hamiltonian(params), rates)


class Propagator:
    """exp(W t) for one superoperator, reusable across many times."""

    def __init__(self, w: Superoperator) -> None:
        self.w = w
        lam, vecs = np.linalg.eig(w.matrix)
        cond = np.linalg.cond(vecs)
        self.diagonalizable = bool(np.isfinite(cond) and cond <= COND_LIMIT)
        self._lam = lam
        self._vecs = vecs if self.diagonalizable else None
        if not self.diagonalizable:
            log.debug(f"eigenvector condition number {cond:.3e}; using expm")

    def apply_raw(self, rho0: DensityMatrix | np.ndarray, t: float) -> np.ndarray:
        """Propagated matrix before any Hermitian/PSD projection."""
        return self.apply_raw_many(rho0, [t])[0]

    def apply_raw_many(self, rho0: DensityMatrix | np.ndarray, times: Sequence[float]) -> np.ndarray:
        mat = rho0.data if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
        v0 = mat.reshape(DIM * DIM)
        ts = np.asarray(times, dtype=float)
        if np.any(ts < 0):
            raise ValueError("evolution time must be >= 0")
        if self._vecs is not None:
            coeff = np.linalg.solve(self._vecs, v0)
            phases = np.exp(np.outer(ts, self._lam))
            out = (phases * coeff) @ self._vecs.T
        else:
            out = np.stack([expm(self.w.matrix * t) @ v0 for t in ts]) if len(ts) else np.empty((0, DIM * DIM))
        if not np.all(np.isfinite(out)):
            raise ConvergenceError("matrix exponential produced non-finite entries")
        return out.reshape(len(ts), DIM, DIM)

    def evolve(self, rho0: DensityMatrix, t: float) -> DensityMatrix:
        if t == 0:
            return rho0
        return DensityMatrix.project(self.apply_raw(rho0, t))

    def evolve_many(self, rho0: DensityMatrix, times: Sequence[float]) -> List[DensityMatrix]:
        raw = self.apply_raw_many(rho0, times)
        return [rho0 if t == 0 else DensityMatrix.project(m) for t, m in zip(times, raw)]


def evolve(w: Superoperator, rho0: DensityMatrix, t: float) -> DensityMatrix:
    if t < 0:
        raise ValueError("evolution time must be >= 0")
    if t == 0:
        return rho0
    return Propagator(w).evolve(rho0, t)


def evolve_many(w: Superoperator, rho0: DensityMatrix, times: Sequence[float]) -> List[DensityMatrix]:
    return Propagator(w).evolve_many(rho0, times)


def stationary_state(w: Superoperator, rho0: DensityMatrix) -> DensityMatrix:
    lam = w.eigenvalues()
    n_null = int(np.sum(np.abs(lam) < NULL_TOL))
    if n_null == 1:
        _, _, vh = np.linalg.svd(w.matrix)
        mat = vh[-1].conj().reshape(DIM, DIM)
        tr = np.trace(mat)
        if abs(tr) < 1e-12:
            raise ConvergenceError("null vector of W has zero trace")
        return DensityMatrix.project(mat / tr)

    decay = -lam.real
    slow = decay[decay > NULL_TOL]
    if slow.size == 0:
        raise ConvergenceError("superoperator has no decaying modes; no stationary limit")
    t_long = 50.0 / float(slow.min())
    log.debug(f"{n_null} null eigenvalues; evolving to t = {t_long:.4g} us")
    rho = evolve(w, rho0, t_long)
    residual = float(np.linalg.norm(w.matrix @ rho.vec()))
    if residual >= RESIDUAL_TOL:
        raise ConvergenceError(f"stationary residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}", partial=rho)
    return rho


def fidelity_trace(
    w: Superoperator, rho0: DensityMatrix, times: Sequence[float], target: StateVector
) -> Tuple[np.ndarray, np.ndarray]:
    """(fidelity, conditional fidelity) of the propagated state against `target`."""
    states = evolve_many(w, rho0, times)
    f = np.array([fidelity(r, target) for r in states])
    fc = np.array([conditional_fidelity(r, target) for r in states])
    return f, fc


def pauli_transfer_matrix(w: Superoperator, t: float) -> np.ndarray:
    """4x4 Pauli transfer matrix of the driven map restricted to the qubit (not trace preserving)."""
    basis = [np.eye(2, dtype=complex)] + list(PAULIS)
    prop = Propagator(w)
    ptm = np.zeros((4, 4))
    for j, pj in enumerate(basis):
        out = prop.apply_raw(embed_qubit(pj), t)
        block = out[np.ix_([ZERO, PLUS1], [ZERO, PLUS1])]
        for i, pi in enumerate(basis):
            ptm[i, j] = 0.5 * np.real(np.trace(pi @ block))
    return ptm


def unitary_transfer_matrix(u: np.ndarray) -> np.ndarray:
    basis = [np.eye(2, dtype=complex)] + list(PAULIS)
    ptm = np.zeros((4, 4))
    for j, pj in enumerate(basis):
        out = u @ pj @ u.conj().T
        for i, pi in enumerate(basis):
            ptm[i, j] = 0.5 * np.real(np.trace(pi @ out))
    return ptm


def ground_process_fidelity(w: Superoperator, t: float, target: np.ndarray) -> float:
    """Process fidelity of exp(W t) on the qubit against the 2x2 unitary `target`."""
    return float(np.trace(unitary_transfer_matrix(target).T @ pauli_transfer_matrix(w, t)) / 4.0)

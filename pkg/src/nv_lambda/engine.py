# nv-lambda/src/nv_lambda/engine.py
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from . import config
from .fitting import ReadoutLevels
from .lindblad import DecayRates, LambdaParams, Propagator, build_superoperator
from .logging_cfg import get_logger
from .quantum import (
    DIM,
    L,
    PLUS1,
    R,
    ZERO,
    DensityMatrix,
    bloch_array,
    bright_state,
    dark_state,
    embed_ground_unitary,
    ground_unitary,
)
from .sequence import (
    EsrRotation,
    FreePrecession,
    GreenReset,
    OpticalDrive,
    PulseSequence,
    ReadoutWindow,
    SignalTrace,
)

log = get_logger(__name__)

_NO_RATES = DecayRates()


def pl_rate(rho: DensityMatrix, rates: DecayRates, efficiency: float) -> float:
    """Collected radiative emission rate efficiency * Gamma * (rho_RR + rho_LL), photons per µs."""
    excited = rho.data[R, R].real + rho.data[L, L].real
    return max(float(efficiency * rates.gamma_rad * excited), 0.0)


class _Ensemble:
    """Weighted density matrices differing only in their free-precession offset."""

    def __init__(self, rho0: DensityMatrix, members: Sequence[Tuple[float, float]]) -> None:
        self.weights = np.array([w for w, _ in members])
        self.offsets = [o for _, o in members]
        self.mats = [rho0.data.copy() for _ in members]

    def mean(self) -> np.ndarray:
        return sum(w * m for w, m in zip(self.weights, self.mats))

    def map_all(self, fn) -> None:
        self.mats = [fn(m) for m in self.mats]


def _grid(duration: float, step: float) -> np.ndarray:
    n = max(1, int(math.ceil(duration / step - 1e-9)))
    return np.linspace(0.0, duration, n + 1)


def _project(mat: np.ndarray) -> np.ndarray:
    return DensityMatrix.project(mat).data


def _drive_states(ens: _Ensemble, params: LambdaParams, rates: DecayRates, grid: np.ndarray) -> List[np.ndarray]:
    """Propagate every member over `grid`; returns the ensemble mean at grid[1:]."""
    prop = Propagator(build_superoperator(params, rates))
    runs = [prop.apply_raw_many(m, grid[1:]) for m in ens.mats]
    ens.mats = [_project(r[-1]) for r in runs]
    return [_project(sum(w * r[k] for w, r in zip(ens.weights, runs))) for k in range(len(grid) - 1)]


def _precession_states(ens: _Ensemble, seg: FreePrecession, grid: np.ndarray) -> List[np.ndarray]:
    rates = seg.rates or _NO_RATES
    runs = []
    for k, m in enumerate(ens.mats):
        params = LambdaParams(two_photon_detuning=seg.detuning + ens.offsets[k])
        raw = Propagator(build_superoperator(params, rates)).apply_raw_many(m, grid[1:])
        if seg.t2_star is not None:
            env = np.exp(-grid[1:] ** 2 / (2.0 * seg.t2_star**2))
            raw[:, ZERO, PLUS1] *= env
            raw[:, PLUS1, ZERO] *= env
        runs.append(raw)
    ens.mats = [_project(r[-1]) for r in runs]
    return [_project(sum(w * r[k] for w, r in zip(ens.weights, runs))) for k in range(len(grid) - 1)]


def run_sequence(seq: PulseSequence, rho0: DensityMatrix, rng_seed: int) -> SignalTrace:
    members = seq.hyperfine.members() if seq.hyperfine else [(1.0, 0.0)]
    ens = _Ensemble(rho0, members)
    scale = seq.shots * seq.collection_efficiency

    t_now = 0.0
    times: List[float] = [0.0]
    mats: List[np.ndarray] = [rho0.data]
    pl: List[float] = [0.0]
    window: Optional[Tuple[int, int]] = None

    for seg in seq.segments:
        if isinstance(seg, GreenReset):
            p = seg.effective_polarization
            reset = np.zeros((DIM, DIM), dtype=complex)
            reset[ZERO, ZERO] = p
            reset[PLUS1, PLUS1] = 1.0 - p
            ens.map_all(lambda _m: reset.copy())
            times.append(t_now)
            mats.append(reset)
            pl.append(0.0)
        elif isinstance(seg, EsrRotation):
            axis = (math.cos(seg.axis_angle), math.sin(seg.axis_angle), 0.0)
            u = embed_ground_unitary(ground_unitary(axis, seg.rotation_angle))
            ens.map_all(lambda m: u @ m @ u.conj().T)
            times.append(t_now)
            mats.append(ens.mean())
            pl.append(0.0)
        elif isinstance(seg, (OpticalDrive, ReadoutWindow, FreePrecession)):
            grid = _grid(seg.duration, seq.sample_step)
            start = len(times) - 1
            if isinstance(seg, FreePrecession):
                new = _precession_states(ens, seg, grid)
                gamma_rates = seg.rates or _NO_RATES
                rates_for_pl = [pl_rate(DensityMatrix(m), gamma_rates, scale) for m in new]
            elif isinstance(seg, ReadoutWindow) and seg.mode == "CyclingZ":
                fixed = ens.mean()
                new = [fixed for _ in grid[1:]]
                rate = scale * seg.photon_rate * float(fixed[ZERO, ZERO].real)
                rates_for_pl = [rate for _ in grid[1:]]
                if seg.measured:
                    pl[-1] = rate
            else:
                params = seg.params
                rates = seg.rates
                assert params is not None and rates is not None
                new = _drive_states(ens, params, rates, grid)
                rates_for_pl = [pl_rate(DensityMatrix(m), rates, scale) for m in new]
                if isinstance(seg, ReadoutWindow) and seg.measured:
                    pl[-1] = pl_rate(DensityMatrix(mats[-1]), rates, scale)
            times.extend(t_now + grid[1:])
            mats.extend(new)
            pl.extend(rates_for_pl)
            if isinstance(seg, ReadoutWindow) and seg.measured:
                window = (start, len(times) - 1)
            t_now += seg.duration

    t = np.asarray(times)
    pl_arr = np.asarray(pl)
    integrated = 0.0
    if window is not None:
        a, b = window
        integrated = float(trapezoid(pl_arr[a : b + 1], t[a : b + 1]))
    sampled = int(np.random.default_rng(rng_seed).poisson(integrated))
    states = tuple(DensityMatrix(m) if i else rho0 for i, m in enumerate(mats))
    stack = np.stack([s.data for s in states])
    log.debug(f"sequence of {len(seq.segments)} segments -> {len(t)} points, {integrated:.6g} counts")
    return SignalTrace(
        t=t,
        bloch=bloch_array(stack),
        pl_rate=pl_arr,
        integrated_counts=integrated,
        sampled_counts=sampled,
        states=states,
        window=window,
    )


def run_many(
    sequences: Sequence[PulseSequence],
    rho0: Sequence[DensityMatrix],
    seeds: Sequence[int],
    workers: Optional[int] = None,
) -> List[SignalTrace]:
    """Independent runs on a thread pool; results keep the input order."""
    if not (len(sequences) == len(rho0) == len(seeds)):
        raise ValueError("sequences, initial states and seeds must have equal length")
    workers = workers or config.settings.SEQUENCE_WORKERS
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_sequence, sequences, rho0, seeds))


def readout_levels(
    params: LambdaParams,
    rates: DecayRates,
    window: float = 0.4,
    shots: int = 1,
    efficiency: float = 1.0,
    branch: str = "R",
) -> ReadoutLevels:
    """DBP integrated counts for the bright and the dark input state of `params`."""
    seq = PulseSequence(
        segments=[ReadoutWindow(duration=window, mode="DBP", params=params, rates=rates)],
        shots=shots,
        collection_efficiency=efficiency,
    )
    bright = DensityMatrix.from_state(bright_state(params.theta, params.phi, branch))  # type: ignore[arg-type]
    dark = DensityMatrix.from_state(dark_state(params.theta, params.phi, branch))  # type: ignore[arg-type]
    trace_b, trace_d = run_many([seq, seq], [bright, dark], [0, 1])
    return ReadoutLevels(I_bright=trace_b.integrated_counts, I_dark=trace_d.integrated_counts, n=shots)

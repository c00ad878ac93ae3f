# nv-lambda/src/nv_lambda/signals.py
"""Photoluminescence observables: CPT spectra, synthetic Ramsey/Hahn data and trace export."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from .engine import pl_rate
from .fitting import HahnParams, RamseyParams, hahn_model, ramsey_model
from .lindblad import DecayRates, LambdaParams, build_superoperator, fidelity_trace, stationary_state
from .logging_cfg import get_logger
from .presets import Preset, load_preset, nominal_state
from .quantum import DensityMatrix, StateVector, conditional_fidelity, dark_state, fidelity
from .sequence import SignalTrace

log = get_logger(__name__)

# singlet lifetime of 371 ns
DEFAULT_ISC_BACK = 2.701


def simulate_cpt_spectrum(
    params: LambdaParams, rates: DecayRates, two_photon_detunings: Sequence[float]
) -> np.ndarray:
    """Steady-state PL rate (efficiency 1) for each two-photon detuning in rad/µs."""
    rho0 = DensityMatrix.maximally_mixed_ground()
    out = np.empty(len(two_photon_detunings))
    for k, delta in enumerate(two_photon_detunings):
        p = params.model_copy(update={"two_photon_detuning": float(delta)})
        rho = stationary_state(build_superoperator(p, rates), rho0)
        out[k] = pl_rate(rho, rates, 1.0)
    log.debug(f"spectrum over {len(out)} detunings, min/max PL {out.min():.4g}/{out.max():.4g}")
    return out


def initialization_trace(
    preset: Union[str, Preset], start: Literal["0", "+1"], times: Sequence[float]
) -> Tuple[np.ndarray, np.ndarray]:
    """(F, conditional F) against the R-branch dark state while the CPT drive runs from a spin eigenstate."""
    p = load_preset(preset) if isinstance(preset, str) else preset
    target = dark_state(p.params.theta, p.params.phi, "R")
    w = build_superoperator(p.params, p.rates)
    return fidelity_trace(w, nominal_state(start), times, target)


def dip_contrast(pl: np.ndarray, detunings: Sequence[float]) -> float:
    """1 - PL(0)/PL(edge), with the edge taken as the mean of the two outermost detunings."""
    det = np.asarray(detunings, dtype=float)
    zero = int(np.argmin(np.abs(det)))
    edge = 0.5 * (pl[int(np.argmin(det))] + pl[int(np.argmax(det))])
    if edge <= 0:
        return 0.0
    return float(1.0 - pl[zero] / edge)


def _poisson(mean: np.ndarray, rng_seed: int) -> np.ndarray:
    return np.random.default_rng(rng_seed).poisson(np.clip(mean, 0.0, None))


def isc_background(tau: np.ndarray, b0: float, isc_back: float = DEFAULT_ISC_BACK) -> np.ndarray:
    """PL from population parked in the singlet, recovering as B0 (1 - exp(-Gamma_i' tau))."""
    return b0 * (1.0 - np.exp(-isc_back * np.asarray(tau, dtype=float)))


def synthesize_ramsey(
    params: RamseyParams,
    tau: Sequence[float],
    shots: int,
    rng_seed: int,
    isc_b0: float = 0.0,
    isc_back: float = DEFAULT_ISC_BACK,
) -> np.ndarray:
    """Poisson counts around shots * (Ramsey model + optional singlet background)."""
    t = np.asarray(tau, dtype=float)
    if t.size == 0:
        raise ValueError("tau grid is empty")
    mean = shots * (ramsey_model(t, params) + isc_background(t, isc_b0, isc_back))
    return _poisson(mean, rng_seed)


@dataclass(frozen=True)
class RamseyPair:
    tau: np.ndarray
    in_phase: np.ndarray
    opposite_phase: np.ndarray

    @property
    def difference(self) -> np.ndarray:
        return self.in_phase.astype(float) - self.opposite_phase.astype(float)


def synthesize_ramsey_pair(
    params: RamseyParams,
    tau: Sequence[float],
    shots: int,
    rng_seed: int,
    isc_b0: float = 0.0,
    isc_back: float = DEFAULT_ISC_BACK,
) -> RamseyPair:
    """Two traces whose final pulses differ in phase by pi; their difference is the Ramsey signal.

    The constant and singlet backgrounds are common to both and cancel in the difference.
    """
    t = np.asarray(tau, dtype=float)
    signal = ramsey_model(t, params.model_copy(update={"background": 0.0}))
    common = params.background + isc_background(t, isc_b0, isc_back)
    seeds = np.random.SeedSequence(rng_seed).spawn(2)
    plus = np.random.default_rng(seeds[0]).poisson(np.clip(shots * (common + 0.5 * signal), 0.0, None))
    minus = np.random.default_rng(seeds[1]).poisson(np.clip(shots * (common - 0.5 * signal), 0.0, None))
    return RamseyPair(t, plus, minus)


def synthesize_hahn(
    T2: float,
    A: float,
    tau: Sequence[float],
    shots: int,
    rng_seed: int,
    background: float = 0.0,
) -> np.ndarray:
    t = np.asarray(tau, dtype=float)
    if t.size == 0:
        raise ValueError("tau grid is empty")
    mean = shots * hahn_model(t, HahnParams(T2=T2, A=A, background=background))
    return _poisson(mean, rng_seed)


# ---- export ----


def trace_columns(trace: SignalTrace, target: Optional[StateVector] = None) -> Dict[str, np.ndarray]:
    cols: Dict[str, np.ndarray] = {
        "t_us": trace.t,
        "bx": trace.bloch[:, 0],
        "by": trace.bloch[:, 1],
        "bz": trace.bloch[:, 2],
        "pl_rate": trace.pl_rate,
    }
    if target is not None:
        cols["fidelity"] = np.array([fidelity(s, target) for s in trace.states])
        cols["conditional_fidelity"] = np.array(
            [conditional_fidelity(s, target) if s.ground_population > 1e-12 else np.nan for s in trace.states]
        )
    return cols


def write_trace_csv(path: Path, trace: SignalTrace, config_sha256: str, target: Optional[StateVector] = None) -> None:
    cols = trace_columns(trace, target)
    names = list(cols)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# config_sha256: {config_sha256}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(names)
        for i in range(len(trace)):
            writer.writerow([f"{cols[n][i]:.12g}" for n in names])


def trace_document(trace: SignalTrace, config_sha256: str, target: Optional[StateVector] = None) -> dict:
    cols = trace_columns(trace, target)
    doc = {
        "config_sha256": config_sha256,
        "t_us": cols["t_us"].tolist(),
        "bloch": trace.bloch.tolist(),
        "pl_rate": trace.pl_rate.tolist(),
        "integrated_counts": trace.integrated_counts,
        "sampled_counts": trace.sampled_counts,
        "readout_window": list(trace.window) if trace.window else None,
        "final_populations": trace.final_state.populations.tolist(),
    }
    if target is not None:
        doc["fidelity"] = cols["fidelity"].tolist()
        doc["conditional_fidelity"] = [None if np.isnan(v) else float(v) for v in cols["conditional_fidelity"]]
    return doc


def write_trace_json(path: Path, trace: SignalTrace, config_sha256: str, target: Optional[StateVector] = None) -> None:
    path.write_text(json.dumps(trace_document(trace, config_sha256, target), indent=2), encoding="utf-8")


def write_table_csv(path: Path, columns: Dict[str, Sequence[float]], config_sha256: str) -> None:
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# config_sha256: {config_sha256}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(names)
        for i in range(n):
            writer.writerow([f"{float(columns[c][i]):.12g}" for c in names])

# nv-lambda/src/nv_lambda/fitting.py
"""Weighted least-squares fits of the Ramsey and Hahn-echo signals, and the readout SNR count."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Type, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import least_squares

from .errors import ConvergenceError, DataFormatError, FitError
from .logging_cfg import get_logger
from .units import AngularFrequency, Duration

log = get_logger(__name__)

ModelName = Literal["ramsey", "hahn"]

XTOL = 1e-10
GTOL = 1e-8
COND_LIMIT = 1e12
DELTA_OMEGA_STARTS = (0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4)


class RamseyParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    T2_star: Duration = Field(gt=0.0)
    delta_omega: AngularFrequency
    omega_HF: AngularFrequency
    tau0: Duration = 0.0
    A: float
    C1: float = Field(default=1.0, ge=0.0)
    C2: float = Field(default=1.0, ge=0.0)
    background: float = 0.0


class HahnParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    T2: Duration = Field(gt=0.0)
    A: float
    background: float = 0.0


class ReadoutLevels(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    I_bright: float = Field(ge=0.0)
    I_dark: float = Field(ge=0.0)
    n: float = Field(gt=0.0)

    @model_validator(mode="after")
    def check_order(self) -> "ReadoutLevels":
        if self.I_bright <= self.I_dark:
            raise ValueError(f"bright level {self.I_bright} must exceed dark level {self.I_dark}")
        return self


Params = Union[RamseyParams, HahnParams]

RAMSEY_FIELDS = ("T2_star", "delta_omega", "omega_HF", "tau0", "A", "C1", "C2", "background")
HAHN_FIELDS = ("T2", "A", "background")


def _ramsey_terms(tau: np.ndarray, p: Sequence[float]):
    t2, d, h, tau0, amp, c1, c2, _ = p
    u = tau - tau0
    env = np.exp(-(tau**2) / (2.0 * t2**2))
    a, b = d - h, d + h
    return u, env, a, b, amp, c1, c2


def ramsey_model(tau: Union[float, np.ndarray], p: RamseyParams) -> np.ndarray:
    return _ramsey_array(np.asarray(tau, dtype=float), np.array([getattr(p, k) for k in RAMSEY_FIELDS]))


def _ramsey_array(tau: np.ndarray, p: np.ndarray) -> np.ndarray:
    u, env, a, b, amp, c1, c2 = _ramsey_terms(tau, p)
    d = p[1]
    return amp * env * (c1 * np.cos(a * u) + np.cos(d * u) + c2 * np.cos(b * u)) + p[7]


def ramsey_jacobian(tau: np.ndarray, p: np.ndarray) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    u, env, a, b, amp, c1, c2 = _ramsey_terms(tau, p)
    t2, d = p[0], p[1]
    ca, cd, cb = np.cos(a * u), np.cos(d * u), np.cos(b * u)
    sa, sd, sb = np.sin(a * u), np.sin(d * u), np.sin(b * u)
    bracket = c1 * ca + cd + c2 * cb
    jac = np.empty((tau.size, 8))
    jac[:, 0] = amp * env * bracket * tau**2 / t2**3
    jac[:, 1] = -amp * env * u * (c1 * sa + sd + c2 * sb)
    jac[:, 2] = amp * env * u * (c1 * sa - c2 * sb)
    jac[:, 3] = amp * env * (c1 * a * sa + d * sd + c2 * b * sb)
    jac[:, 4] = env * bracket
    jac[:, 5] = amp * env * ca
    jac[:, 6] = amp * env * cb
    jac[:, 7] = 1.0
    return jac


def hahn_model(tau: Union[float, np.ndarray], p: HahnParams) -> np.ndarray:
    return _hahn_array(np.asarray(tau, dtype=float), np.array([p.T2, p.A, p.background]))


def _hahn_array(tau: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p[1] * np.exp(-((tau / p[0]) ** 3)) + p[2]


def hahn_jacobian(tau: np.ndarray, p: np.ndarray) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    t2, amp = p[0], p[1]
    g = np.exp(-((tau / t2) ** 3))
    jac = np.empty((tau.size, 3))
    jac[:, 0] = amp * g * 3.0 * tau**3 / t2**4
    jac[:, 1] = g
    jac[:, 2] = 1.0
    return jac


@dataclass(frozen=True)
class _ModelSpec:
    fields: Tuple[str, ...]
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray, np.ndarray], np.ndarray]
    params_type: Type[BaseModel]


MODELS: Dict[str, _ModelSpec] = {
    "ramsey": _ModelSpec(RAMSEY_FIELDS, _ramsey_array, ramsey_jacobian, RamseyParams),
    "hahn": _ModelSpec(HAHN_FIELDS, _hahn_array, hahn_jacobian, HahnParams),
}


def numerical_jacobian(model: ModelName, tau: np.ndarray, p: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    spec = MODELS[model]
    p = np.asarray(p, dtype=float)
    jac = np.empty((np.size(tau), p.size))
    for k in range(p.size):
        h = rel_step * max(abs(p[k]), 1.0)
        up, dn = p.copy(), p.copy()
        up[k] += h
        dn[k] -= h
        jac[:, k] = (spec.fn(tau, up) - spec.fn(tau, dn)) / (2.0 * h)
    return jac


@dataclass(frozen=True)
class FitData:
    tau: np.ndarray
    counts: np.ndarray
    weight: np.ndarray

    @classmethod
    def from_counts(cls, tau: Iterable[float], counts: Iterable[float]) -> "FitData":
        """Poisson weights 1/max(y, 1)."""
        y = np.asarray(list(counts), dtype=float)
        return cls(np.asarray(list(tau), dtype=float), y, 1.0 / np.maximum(y, 1.0))

    def __len__(self) -> int:
        return len(self.tau)


@dataclass
class FitResult:
    model: str
    params: Params
    stderr: Dict[str, float]
    covariance: np.ndarray
    free: Tuple[str, ...]
    chi2: float
    dof: int
    converged: bool
    nfev: int
    message: str = ""
    scaled: bool = True
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    def to_report(self) -> Dict[str, object]:
        return {
            "model": self.model,
            "estimates": self.params.model_dump(),
            "standard_errors": self.stderr,
            "covariance": {"parameters": list(self.free), "matrix": self.covariance.tolist()},
            "chi2": self.chi2,
            "reduced_chi2": self.reduced_chi2,
            "dof": self.dof,
            "converged": self.converged,
            "covariance_scaled_by_reduced_chi2": self.scaled,
            "nfev": self.nfev,
            "message": self.message,
        }


def _single_fit(
    spec: _ModelSpec, data: FitData, p0: np.ndarray, free_idx: List[int], max_nfev: int
) -> Tuple[np.ndarray, object]:
    sw = np.sqrt(data.weight)

    def full(x: np.ndarray) -> np.ndarray:
        p = p0.copy()
        p[free_idx] = x
        return p

    def residuals(x: np.ndarray) -> np.ndarray:
        return sw * (spec.fn(data.tau, full(x)) - data.counts)

    def jacobian(x: np.ndarray) -> np.ndarray:
        return sw[:, None] * spec.jac(data.tau, full(x))[:, free_idx]

    res = least_squares(
        residuals, p0[free_idx], jac=jacobian, method="lm", xtol=XTOL, gtol=GTOL, ftol=XTOL, max_nfev=max_nfev
    )
    return full(res.x), res


def fit_model(
    model: ModelName,
    data: FitData,
    init: Params,
    fixed: Iterable[str] = (),
    scale_covariance: bool = True,
    multistart: bool = True,
    max_nfev: int = 5000,
) -> FitResult:
    spec = MODELS[model]
    fixed = set(fixed)
    unknown = fixed - set(spec.fields)
    if unknown:
        raise FitError(f"unknown parameters to fix for {model}: {sorted(unknown)}", bad_input=True)
    free = tuple(k for k in spec.fields if k not in fixed)
    free_idx = [spec.fields.index(k) for k in free]
    if len(data) < 2 * len(free):
        raise FitError(f"{len(data)} points is fewer than twice the {len(free)} free parameters", bad_input=True)
    if np.any(data.weight <= 0) or not np.all(np.isfinite(data.weight)):
        raise FitError("weights must be finite and > 0", bad_input=True)

    p_init = np.array([getattr(init, k) for k in spec.fields], dtype=float)
    starts = [p_init]
    if model == "ramsey" and multistart and "delta_omega" in free:
        starts = []
        for factor in DELTA_OMEGA_STARTS:
            p = p_init.copy()
            p[1] *= factor
            starts.append(p)

    best: Optional[Tuple[float, np.ndarray, object]] = None
    for p0 in starts:
        p_hat, res = _single_fit(spec, data, p0, free_idx, max_nfev)
        cost = float(np.sum(data.weight * (spec.fn(data.tau, p_hat) - data.counts) ** 2))
        log.debug(f"{model} start delta={p0[1]:.4g}: chi2={cost:.6g} status={res.status}")  # type: ignore[attr-defined]
        if best is None or cost < best[0]:
            best = (cost, p_hat, res)
    assert best is not None
    chi2, p_hat, res = best
    if res.status == 0:  # type: ignore[attr-defined]
        raise ConvergenceError(f"{model} fit exhausted its budget of {max_nfev} evaluations", partial=p_hat)

    if model == "ramsey":
        # the envelope depends on T2* squared
        p_hat[0] = abs(p_hat[0])
    if p_hat[0] <= 0:
        raise FitError(f"{model} fit ended at a non-positive coherence time {p_hat[0]:.4g}")

    jac = spec.jac(data.tau, p_hat)[:, free_idx]
    normal = jac.T @ (data.weight[:, None] * jac)
    cond = np.linalg.cond(normal)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise FitError(f"singular normal matrix (condition number {cond:.3e})")
    cov = np.linalg.inv(normal)
    dof = len(data) - len(free)
    if scale_covariance:
        cov = cov * (chi2 / dof)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    stderr = {k: 0.0 for k in spec.fields}
    stderr.update({k: float(v) for k, v in zip(free, se)})

    params = spec.params_type(**dict(zip(spec.fields, (float(v) for v in p_hat))))
    log.info(f"{model} fit converged: chi2/dof={chi2 / dof:.4g}, nfev={res.nfev}")  # type: ignore[attr-defined]
    return FitResult(
        model=model,
        params=params,  # type: ignore[arg-type]
        stderr=stderr,
        covariance=cov,
        free=free,
        chi2=chi2,
        dof=dof,
        converged=True,
        nfev=int(res.nfev),  # type: ignore[attr-defined]
        message=str(res.message),  # type: ignore[attr-defined]
        scaled=scale_covariance,
    )


def evaluate(model: ModelName, tau: np.ndarray, params: Params) -> np.ndarray:
    spec = MODELS[model]
    return spec.fn(np.asarray(tau, dtype=float), np.array([getattr(params, k) for k in spec.fields], dtype=float))


def model_curve(result: FitResult, tau_min: float, tau_max: float, points: int = 1000) -> Tuple[np.ndarray, np.ndarray]:
    """Dense, plot-ready evaluation of the fitted model."""
    tau = np.linspace(tau_min, tau_max, points)
    return tau, evaluate(result.model, tau, result.params)  # type: ignore[arg-type]


def required_readouts(levels: ReadoutLevels) -> float:
    """Readouts needed for unit signal-to-noise: (n/2)(I_B + I_D)/(I_B - I_D)^2."""
    diff = levels.I_bright - levels.I_dark
    if diff == 0:
        raise ValueError("bright and dark levels are equal; signal-to-noise is undefined")
    return 0.5 * levels.n * (levels.I_bright + levels.I_dark) / diff**2


# ---- I/O ----


def read_fit_data(path: Path) -> FitData:
    """CSV with columns tau_us, counts[, weight]; lines starting with '#' are comments."""
    taus: List[float] = []
    counts: List[float] = []
    weights: List[Optional[float]] = []
    with path.open("r", encoding="utf-8", newline="") as f:
        rows = [(i, line) for i, line in enumerate(f, start=1) if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise DataFormatError(f"{path} has no data")
    header_row, header_line = rows[0]
    header = [h.strip() for h in next(csv.reader([header_line]))]
    if header[:2] != ["tau_us", "counts"]:
        raise DataFormatError(f"expected header tau_us,counts[,weight], got {','.join(header)}", row=header_row)
    has_weight = len(header) > 2 and header[2] == "weight"
    for row_no, line in rows[1:]:
        cells = next(csv.reader([line]))
        if len(cells) != len(header):
            raise DataFormatError(f"expected {len(header)} fields, got {len(cells)}", row=row_no)
        try:
            tau, y = float(cells[0]), float(cells[1])
            w = float(cells[2]) if has_weight else None
        except ValueError as e:
            raise DataFormatError(f"not a number: {e}", row=row_no) from e
        if not (math.isfinite(tau) and math.isfinite(y)) or (w is not None and not w > 0):
            raise DataFormatError("non-finite value or non-positive weight", row=row_no)
        taus.append(tau)
        counts.append(y)
        weights.append(w)
    y_arr = np.asarray(counts)
    if has_weight:
        w_arr = np.asarray(weights, dtype=float)
    else:
        w_arr = 1.0 / np.maximum(y_arr, 1.0)
    return FitData(np.asarray(taus), y_arr, w_arr)


def write_fit_data(path: Path, data: FitData, config_sha256: str) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# config_sha256: {config_sha256}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["tau_us", "counts", "weight"])
        for tau, y, w in zip(data.tau, data.counts, data.weight):
            writer.writerow([f"{tau:.12g}", f"{y:.12g}", f"{w:.12g}"])


def write_fit_report(path: Path, result: FitResult, config_sha256: str) -> None:
    report = {"config_sha256": config_sha256, **result.to_report()}
    path.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")

# nv-lambda/src/nv_lambda/tomography.py
"""
Bayesian tomography of the ground-state qubit from photoluminescence counts.

Each record is the count D_k of one projection. Its expectation follows from the
Bloch vector, the |0_g> fluorescence F0, the contrast C and six small systematic
angles of the two pi/2 tomography pulses. The per-record noise scale has been
integrated out against its prior, which leaves a heavy-tailed likelihood.
Parameter vectors are ordered as PARAM_NAMES throughout.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.integrate import cumulative_trapezoid
from scipy.stats import norm

from .errors import DataFormatError
from .intervals import circular_hpd_interval, circular_mean, hpd_interval
from .logging_cfg import get_logger
from .quantum import SIGMA_Z, BlochVector, bloch_from_spherical, ground_unitary, qubit_density, spherical_from_bloch
from .sampler import Bounds, PosteriorArchive, SamplerSettings, sample

log = get_logger(__name__)

PARAM_NAMES: Tuple[str, ...] = (
    "r", "theta_b", "phi_b", "F0", "C",
    "eps_y", "eps_z", "v_x", "v_z", "phi_err", "theta_err",
)
ANGLE_NAMES = PARAM_NAMES[5:]
DIM = len(PARAM_NAMES)
ANGLE_SD = math.radians(5.0)
REFERENCE_PRIOR_CONST = 1.0 / (2.0 * math.pi**4)
F0_PRIOR_FACTOR = 10.0
HPD_MASS = 0.682

Projection = Literal["X", "Y", "Z", "NORM0", "NORM1"]
_AXIS = {"X": 0, "Y": 1, "Z": 2}
# NORM0 expects F0, NORM1 expects F0 (1 - C)
_NORM_SIGN = {"NORM0": 1.0, "NORM1": -1.0}


# ---- records ----


class TomographyRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    record_id: str = Field(min_length=1)
    projection: Projection
    counts: float = Field(ge=0.0, allow_inf_nan=False)
    shots: int = Field(default=1, gt=0)


class TomographyData(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    records: Tuple[TomographyRecord, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def check_unique_ids(self) -> "TomographyData":
        seen = set()
        for rec in self.records:
            if rec.record_id in seen:
                raise ValueError(f"duplicate record_id {rec.record_id!r}")
            seen.add(rec.record_id)
        return self

    @property
    def reference_shots(self) -> int:
        return max(r.shots for r in self.records)

    def by_projection(self, projection: Projection) -> List[TomographyRecord]:
        return [r for r in self.records if r.projection == projection]


class TomographyParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    r: float = Field(ge=0.0, le=1.0)
    theta_b: float = Field(ge=0.0, le=math.pi)
    phi_b: float = 0.0
    F0: float = Field(gt=0.0)
    C: float = Field(ge=0.0, le=1.0)
    eps_y: float = 0.0
    eps_z: float = 0.0
    v_x: float = 0.0
    v_z: float = 0.0
    phi_err: float = 0.0
    theta_err: float = 0.0

    @classmethod
    def from_bloch(cls, b: BlochVector, F0: float, C: float, **angles: float) -> "TomographyParams":
        r, theta, phi = spherical_from_bloch(b)
        return cls(r=r, theta_b=theta, phi_b=phi, F0=F0, C=C, **angles)

    @classmethod
    def from_array(cls, v: Sequence[float] | np.ndarray) -> "TomographyParams":
        return cls(**{k: float(x) for k, x in zip(PARAM_NAMES, v)})

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES], dtype=float)

    @property
    def bloch(self) -> BlochVector:
        return bloch_from_spherical(min(self.r, 1.0), self.theta_b, self.phi_b)


# ---- forward model ----


def error_rotation_unitaries(p: TomographyParams) -> Tuple[np.ndarray, np.ndarray]:
    """(U_X, U_Y): the pi/2 pulse about the tilted x axis and the -pi/2 pulse about the tilted y axis."""
    u_x = ground_unitary((1.0, p.eps_y, p.eps_z), math.pi / 2.0 + 2.0 * p.phi_err)
    u_y = ground_unitary((p.v_x, 1.0, p.v_z), -math.pi / 2.0 + 2.0 * p.theta_err)
    return u_x, u_y


def projections(p: TomographyParams) -> Tuple[float, float, float]:
    """(<X>, <Y>, <Z>) as read out through the imperfect tomography pulses."""
    rho = qubit_density(p.bloch)
    u_x, u_y = error_rotation_unitaries(p)
    z = float(np.real(np.trace(SIGMA_Z @ rho)))
    x = float(np.real(np.trace(SIGMA_Z @ u_y @ rho @ u_y.conj().T)))
    y = float(np.real(np.trace(SIGMA_Z @ u_x @ rho @ u_x.conj().T)))
    return x, y, z


def expected_fluorescence(p: TomographyParams) -> Tuple[float, float, float]:
    """(<F_X>, <F_Y>, <F_Z>) in counts at the reference shot number."""
    return tuple(p.F0 * (1.0 - p.C / 2.0) + p.F0 * (p.C / 2.0) * e for e in projections(p))  # type: ignore[return-value]


def _rotated_z(b: np.ndarray, axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """z component of each Bloch vector rotated by `angle` about `axis` (rows)."""
    n = axis / np.linalg.norm(axis, axis=1, keepdims=True)
    c, s = np.cos(angle), np.sin(angle)
    cross_z = n[:, 0] * b[:, 1] - n[:, 1] * b[:, 0]
    dot = np.sum(n * b, axis=1)
    return b[:, 2] * c + cross_z * s + n[:, 2] * dot * (1.0 - c)


def projections_batch(theta: np.ndarray) -> np.ndarray:
    """(n, 3) array of (<X>, <Y>, <Z>) for an (n, 11) parameter array."""
    theta = np.atleast_2d(theta)
    r, th, ph = theta[:, 0], theta[:, 1], theta[:, 2]
    eps_y, eps_z, v_x, v_z, phi_err, theta_err = theta[:, 5:].T
    st = np.sin(th)
    b = np.column_stack([r * st * np.cos(ph), r * st * np.sin(ph), r * np.cos(th)])
    ones = np.ones_like(r)
    x = _rotated_z(b, np.column_stack([v_x, ones, v_z]), -np.pi / 2.0 + 2.0 * theta_err)
    y = _rotated_z(b, np.column_stack([ones, eps_y, eps_z]), np.pi / 2.0 + 2.0 * phi_err)
    return np.column_stack([x, y, b[:, 2]])


def expected_fluorescence_batch(theta: np.ndarray) -> np.ndarray:
    theta = np.atleast_2d(theta)
    f0, c = theta[:, 3:4], theta[:, 4:5]
    return f0 * (1.0 - c / 2.0) + f0 * (c / 2.0) * projections_batch(theta)


class ForwardModel:
    """Record layout of one dataset, compiled to arrays for repeated posterior evaluation."""

    def __init__(self, data: TomographyData) -> None:
        self.data = data
        ref = data.reference_shots
        self.counts = np.array([r.counts for r in data.records], dtype=float)
        self.scale = np.array([r.shots / ref for r in data.records], dtype=float)
        self.axis = np.array([_AXIS.get(r.projection, -1) for r in data.records], dtype=int)
        self.norm_sign = np.array([_NORM_SIGN.get(r.projection, 0.0) for r in data.records], dtype=float)
        self.f0_max = max(F0_PRIOR_FACTOR * float(np.max(self.counts / self.scale)), 1.0)

    def expected(self, theta: np.ndarray) -> np.ndarray:
        """(n, K) expected counts per record."""
        theta = np.atleast_2d(theta)
        proj = projections_batch(theta)
        is_norm = self.axis < 0
        e = np.where(is_norm[None, :], self.norm_sign[None, :], proj[:, np.where(is_norm, 0, self.axis)])
        f0, c = theta[:, 3:4], theta[:, 4:5]
        return self.scale[None, :] * (f0 * (1.0 - c / 2.0) + f0 * (c / 2.0) * e)

    def log_likelihood(self, theta: np.ndarray) -> np.ndarray:
        f = self.expected(theta)
        bad = np.any(f <= 0.0, axis=1)
        f = np.where(f > 0.0, f, 1.0)
        sigma_bar = 2.0 * np.sqrt(f)
        terms = -np.log(math.sqrt(2.0) * math.pi * sigma_bar) - np.log1p(
            (self.counts[None, :] - f) ** 2 / (2.0 * sigma_bar**2)
        )
        return np.where(bad, -np.inf, terms.sum(axis=1))

    def log_prior(self, theta: np.ndarray) -> np.ndarray:
        return log_prior_batch(theta, self.f0_max)

    def log_posterior(self, theta: np.ndarray, use_likelihood: bool = True) -> np.ndarray:
        theta = np.atleast_2d(theta)
        lp = self.log_prior(theta)
        if not use_likelihood:
            return lp
        out = np.full(len(theta), -np.inf)
        ok = np.isfinite(lp)
        if np.any(ok):
            out[ok] = lp[ok] + self.log_likelihood(theta[ok])
        return out

    def bounds(self) -> Bounds:
        limits = [(0.0, 1.0), (0.0, math.pi), (0.0, 2.0 * math.pi), (0.0, self.f0_max), (0.0, 1.0)]
        limits += [(-math.inf, math.inf)] * len(ANGLE_NAMES)
        return Bounds.build(limits, periodic=(False, False, True))


def log_likelihood(data: TomographyData, p: TomographyParams) -> float:
    model = ForwardModel(data)
    theta = p.as_array()[None, :]
    if np.any(model.expected(theta) <= 0.0):
        raise ValueError("expected fluorescence must be positive for every record")
    return float(model.log_likelihood(theta)[0])


# ---- prior ----


def reference_prior_density(r: float | np.ndarray, theta: float | np.ndarray) -> np.ndarray:
    """Reference prior over (r, theta_b, phi_b) with respect to dr dtheta dphi."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = REFERENCE_PRIOR_CONST / np.sqrt(1.0 - r**2) * np.log((1.0 - r) / (1.0 + r)) ** 2 * np.sin(theta)
    return np.where((r >= 0.0) & (r < 1.0), dens, 0.0)


def log_prior_batch(theta: np.ndarray, f0_max: float) -> np.ndarray:
    theta = np.atleast_2d(theta)
    r, th, f0, c = theta[:, 0], theta[:, 1], theta[:, 3], theta[:, 4]
    ok = (r > 0.0) & (r < 1.0) & (th > 0.0) & (th < math.pi) & (f0 > 0.0) & (f0 <= f0_max) & (c >= 0.0) & (c <= 1.0)
    rr = np.where(ok, r, 0.5)
    tt = np.where(ok, th, 0.5)
    lp = (
        math.log(REFERENCE_PRIOR_CONST)
        - 0.5 * np.log1p(-rr**2)
        + 2.0 * np.log(2.0 * np.arctanh(rr))
        + np.log(np.sin(tt))
        - math.log(f0_max)
        + norm.logpdf(theta[:, 5:], 0.0, ANGLE_SD).sum(axis=1)
    )
    return np.where(ok, lp, -np.inf)


def log_prior(p: TomographyParams, f0_max: float) -> float:
    return float(log_prior_batch(p.as_array(), f0_max)[0])


_U_GRID = np.linspace(0.0, 60.0, 24001)
_U_CDF = cumulative_trapezoid(_U_GRID**2 / np.cosh(_U_GRID), _U_GRID, initial=0.0)
_U_CDF /= _U_CDF[-1]


def sample_prior(rng: np.random.Generator, n: int, f0_max: float) -> np.ndarray:
    """n independent prior draws; r via the inverse CDF of atanh(r), whose density is (8/pi^3) u^2 sech u."""
    u = np.interp(rng.random(n), _U_CDF, _U_GRID)
    r = np.minimum(np.tanh(u), np.nextafter(1.0, 0.0))
    th = np.arccos(1.0 - 2.0 * rng.random(n))
    ph = 2.0 * math.pi * rng.random(n)
    f0 = f0_max * (1.0 - rng.random(n))
    c = rng.random(n)
    angles = rng.normal(0.0, ANGLE_SD, size=(n, len(ANGLE_NAMES)))
    return np.column_stack([r, th, ph, f0, c, angles])


def initial_population(model: ForwardModel, rng: np.random.Generator, n: int, use_likelihood: bool) -> np.ndarray:
    """Starting archive: prior draws, with F0 and C narrowed around the normalization records when present."""
    theta = sample_prior(rng, n, model.f0_max)
    if not use_likelihood:
        return theta
    norm0 = model.counts[model.norm_sign > 0] / model.scale[model.norm_sign > 0]
    norm1 = model.counts[model.norm_sign < 0] / model.scale[model.norm_sign < 0]
    if norm0.size:
        f0 = float(np.mean(norm0))
        theta[:, 3] = np.clip(f0 * rng.uniform(0.95, 1.05, n), 1e-9, model.f0_max)
        if norm1.size:
            c = float(np.clip(1.0 - np.mean(norm1) / f0, 0.0, 1.0))
            theta[:, 4] = np.clip(c + rng.uniform(-0.05, 0.05, n), 0.0, 1.0)
    else:
        scaled = model.counts / model.scale
        theta[:, 3] = np.clip(float(np.max(scaled)) * rng.uniform(0.9, 1.3, n), 1e-9, model.f0_max)
    return theta


# ---- posterior ----


def sample_posterior(
    data: TomographyData,
    cfg: Optional[SamplerSettings] = None,
    rng_seed: int = 0,
    use_likelihood: bool = True,
) -> PosteriorArchive:
    """MCMC draws of all eleven parameters. `use_likelihood=False` samples the prior alone."""
    cfg = cfg or SamplerSettings()
    model = ForwardModel(data)
    init_seed, chain_seed = np.random.SeedSequence(rng_seed).spawn(2)
    initial = initial_population(
        model, np.random.default_rng(init_seed), cfg.archive_size(DIM) + cfg.chains, use_likelihood
    )
    log.info(f"sampling tomography posterior: {len(data.records)} records, {cfg.chains} chains, k={cfg.multi_try}")
    return sample(
        lambda th: model.log_posterior(th, use_likelihood),
        initial,
        model.bounds(),
        cfg,
        int(chain_seed.generate_state(1)[0]),
        PARAM_NAMES,
        circular=("phi_b",),
    )


def cartesian_samples(theta: np.ndarray) -> np.ndarray:
    r, th, ph = theta[:, 0], theta[:, 1], theta[:, 2]
    st = np.sin(th)
    return np.column_stack([r * st * np.cos(ph), r * st * np.sin(ph), r * np.cos(th)])


class IntervalSummary(BaseModel):
    mean: float
    lo: float
    hi: float

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


class PosteriorSummary(BaseModel):
    parameters: Dict[str, IntervalSummary]
    bloch: Dict[str, IntervalSummary]
    fidelity: IntervalSummary
    acceptance_rate: float
    rhat: Dict[str, float]
    n_samples: int
    converged: bool
    mass: float = HPD_MASS


def _interval(values: np.ndarray, mass: float) -> IntervalSummary:
    lo, hi = hpd_interval(values, mass)
    return IntervalSummary(mean=float(np.mean(values)), lo=lo, hi=hi)


def summarize_posterior(archive: PosteriorArchive, mass: float = HPD_MASS, rhat_limit: float = 1.1) -> PosteriorSummary:
    """Marginal means and HPD intervals; the fidelity is (1 + r)/2 evaluated per draw."""
    pooled = archive.pooled()
    params: Dict[str, IntervalSummary] = {}
    for i, name in enumerate(archive.names):
        col = pooled[:, i]
        if name == "phi_b":
            lo, hi = circular_hpd_interval(col, mass)
            params[name] = IntervalSummary(mean=circular_mean(col), lo=lo, hi=hi)
        else:
            params[name] = _interval(col, mass)
    xyz = cartesian_samples(pooled)
    bloch = {axis: _interval(xyz[:, k], mass) for k, axis in enumerate("xyz")}
    fid = 0.5 * (1.0 + np.minimum(pooled[:, 0], 1.0))
    return PosteriorSummary(
        parameters=params,
        bloch=bloch,
        fidelity=_interval(fid, mass),
        acceptance_rate=archive.acceptance_rate,
        rhat={n: float(v) for n, v in zip(archive.names, archive.rhat)},
        n_samples=int(pooled.shape[0]),
        converged=archive.converged(rhat_limit),
        mass=mass,
    )


# ---- synthesis ----


def synthesize_tomography_data(
    bloch: BlochVector,
    F0: float,
    C: float,
    rng: np.random.Generator,
    angles: Optional[Dict[str, float]] = None,
    shots: int = 1,
    repeats: int = 1,
    noise: Literal["prior", "poisson", "none"] = "prior",
    normalization: bool = True,
) -> TomographyData:
    """Counts for X, Y, Z (and NORM0/NORM1) records from a known state.

    `prior` noise draws each record's sigma from the same prior the likelihood
    integrates over (sigma = sigma_bar / sqrt(g), g ~ Gamma(1/2, 1)); `poisson`
    is plain shot noise.
    """
    truth = TomographyParams.from_bloch(bloch, F0, C, **(angles or {}))
    kinds: List[Projection] = ["X", "Y", "Z"] + (["NORM0", "NORM1"] if normalization else [])
    template = TomographyData(
        records=tuple(
            TomographyRecord(record_id=f"{k}-{i}", projection=k, counts=0.0, shots=shots)
            for k in kinds
            for i in range(repeats)
        )
    )
    mean = ForwardModel(template).expected(truth.as_array())[0]
    if noise == "prior":
        sigma = 2.0 * np.sqrt(mean) / np.sqrt(rng.gamma(0.5, 1.0, size=mean.shape))
        counts = np.rint(np.clip(mean + sigma * rng.standard_normal(mean.shape), 0.0, None))
    elif noise == "poisson":
        counts = rng.poisson(mean).astype(float)
    else:
        counts = mean
    records = tuple(rec.model_copy(update={"counts": float(v)}) for rec, v in zip(template.records, counts))
    return TomographyData(records=records)


# ---- I/O ----

_CSV_HEADER = ["record_id", "projection", "counts", "shots"]


def _record(fields: dict, row: int) -> TomographyRecord:
    try:
        return TomographyRecord.model_validate(fields)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(x) for x in first["loc"])
        raise DataFormatError(f"{loc}: {first['msg']}", row=row) from e


def _dataset(records: Iterable[TomographyRecord]) -> TomographyData:
    try:
        return TomographyData(records=tuple(records))
    except ValidationError as e:
        raise DataFormatError(e.errors()[0]["msg"]) from e


def read_tomography_csv(path: Path) -> TomographyData:
    """record_id,projection,counts[,shots]; '#' lines are comments, rows are numbered by file line."""
    with path.open("r", encoding="utf-8", newline="") as f:
        lines = [(i, ln) for i, ln in enumerate(f, start=1) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataFormatError(f"{path} has no data")
    header_row, header_line = lines[0]
    header = [h.strip() for h in next(csv.reader([header_line]))]
    if header not in (_CSV_HEADER, _CSV_HEADER[:3]):
        raise DataFormatError(f"expected header {','.join(_CSV_HEADER)}, got {','.join(header)}", row=header_row)
    records = []
    for row_no, line in lines[1:]:
        cells = [c.strip() for c in next(csv.reader([line]))]
        if len(cells) != len(header):
            raise DataFormatError(f"expected {len(header)} fields, got {len(cells)}", row=row_no)
        records.append(_record(dict(zip(header, cells)), row_no))
    if not records:
        raise DataFormatError(f"{path} has a header but no records")
    return _dataset(records)


def read_tomography_json(path: Path) -> TomographyData:
    """{"records": [{record_id, projection, counts, shots}, ...]}; rows are 1-based record positions."""
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path} is not valid JSON: {e}") from e
    items = doc.get("records") if isinstance(doc, dict) else doc
    if not isinstance(items, list) or not items:
        raise DataFormatError(f"{path} has no 'records' list")
    records = []
    for i, item in enumerate(items, start=1):
        if not isinstance(item, dict):
            raise DataFormatError("record must be an object", row=i)
        records.append(_record(item, i))
    return _dataset(records)


def read_tomography_data(path: Path) -> TomographyData:
    if not path.exists():
        raise DataFormatError(f"{path} does not exist")
    if path.suffix.lower() == ".json":
        return read_tomography_json(path)
    return read_tomography_csv(path)


def write_tomography_csv(path: Path, data: TomographyData, config_sha256: str) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# config_sha256: {config_sha256}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(_CSV_HEADER)
        for r in data.records:
            writer.writerow([r.record_id, r.projection, f"{r.counts:.12g}", r.shots])


def write_posterior_samples(path: Path, archive: PosteriorArchive, config_sha256: str) -> None:
    names = list(archive.names)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# config_sha256: {config_sha256}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["chain", "draw", "log_density", *names, "x", "y", "z", "fidelity"])
        for c in range(archive.n_chains):
            theta = archive.samples[c]
            xyz = cartesian_samples(theta)
            for d in range(archive.n_draws):
                fid = 0.5 * (1.0 + min(theta[d, 0], 1.0))
                values = [archive.log_density[c, d], *theta[d], *xyz[d], fid]
                writer.writerow([c, d, *(f"{v:.12g}" for v in values)])


def write_posterior_summary(path: Path, summary: PosteriorSummary, config_sha256: str) -> None:
    doc = {"config_sha256": config_sha256, **summary.model_dump()}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")

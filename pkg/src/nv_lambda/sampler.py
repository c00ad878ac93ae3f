# nv-lambda/src/nv_lambda/sampler.py
"""
Multiple-try differential-evolution MCMC with a shared archive of past states.

Jumps are built from differences of archived states. Parallel-direction moves
select among `multi_try` candidates (multiple-try Metropolis); snooker moves are
single-try with the (d - 1) Jacobian correction. The archive only grows at
synchronization points, so a run is fixed by its seed whatever the thread
scheduling.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import logsumexp

from . import config
from .errors import ConvergenceError
from .logging_cfg import get_logger

log = get_logger(__name__)

# (n, d) -> (n,) log densities, -inf outside the support
LogDensity = Callable[[np.ndarray], np.ndarray]


class SamplerSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    chains: int = Field(default=4, ge=2)
    multi_try: int = Field(default=7, ge=1)
    iterations: int = Field(default=4000, ge=10)
    burn_in: int = Field(default=2000, ge=0)
    thin: int = Field(default=1, ge=1)
    archive_init: Optional[int] = Field(default=None, ge=3)
    archive_every: int = Field(default=10, ge=1)
    snooker_prob: float = Field(default=0.1, ge=0.0, le=1.0)
    crossover: Tuple[float, ...] = (1.0 / 3.0, 2.0 / 3.0, 1.0)
    pairs: int = Field(default=1, ge=1)
    jitter: float = Field(default=0.05, ge=0.0)
    noise: float = Field(default=1e-6, ge=0.0)
    rhat_limit: float = Field(default=1.1, gt=1.0)
    check_convergence: bool = True
    workers: Optional[int] = Field(default=None, ge=1)

    @field_validator("crossover")
    @classmethod
    def validate_crossover(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if not v or any(not 0.0 < c <= 1.0 for c in v):
            raise ValueError(f"crossover values must lie in (0, 1], got {v}")
        return v

    @model_validator(mode="after")
    def check_budget(self) -> "SamplerSettings":
        if self.burn_in >= self.iterations:
            raise ValueError(f"burn_in ({self.burn_in}) must be smaller than iterations ({self.iterations})")
        if (self.iterations - self.burn_in) // self.thin < 4:
            raise ValueError("fewer than 4 retained draws per chain")
        return self

    def archive_size(self, dim: int) -> int:
        return self.archive_init or 10 * dim


@dataclass(frozen=True)
class Bounds:
    """Per-coordinate support. Finite bounds reflect, periodic ones wrap."""

    lower: np.ndarray
    upper: np.ndarray
    periodic: np.ndarray

    @classmethod
    def build(cls, limits: Sequence[Tuple[float, float]], periodic: Sequence[bool] = ()) -> "Bounds":
        lo = np.array([a for a, _ in limits], dtype=float)
        hi = np.array([b for _, b in limits], dtype=float)
        per = np.zeros(len(lo), dtype=bool)
        per[: len(periodic)] = periodic
        if np.any(lo >= hi):
            raise ValueError("every lower bound must be below its upper bound")
        if np.any(per & ~(np.isfinite(lo) & np.isfinite(hi))):
            raise ValueError("periodic coordinates need finite bounds")
        return cls(lo, hi, per)

    def fold(self, x: np.ndarray) -> np.ndarray:
        y = np.array(x, dtype=float, copy=True)
        lo = np.broadcast_to(self.lower, y.shape)
        hi = np.broadcast_to(self.upper, y.shape)
        per = np.broadcast_to(self.periodic, y.shape)
        both = np.isfinite(lo) & np.isfinite(hi)
        width = np.where(both, hi - lo, 1.0)

        wrap = per
        y[wrap] = lo[wrap] + np.mod(y[wrap] - lo[wrap], width[wrap])

        refl = both & ~per
        t = np.mod(y[refl] - lo[refl], 2.0 * width[refl])
        y[refl] = lo[refl] + np.where(t > width[refl], 2.0 * width[refl] - t, t)

        only_lo = np.isfinite(lo) & ~np.isfinite(hi)
        y[only_lo] = np.where(y[only_lo] < lo[only_lo], 2.0 * lo[only_lo] - y[only_lo], y[only_lo])
        only_hi = ~np.isfinite(lo) & np.isfinite(hi)
        y[only_hi] = np.where(y[only_hi] > hi[only_hi], 2.0 * hi[only_hi] - y[only_hi], y[only_hi])
        return y


@dataclass(frozen=True)
class PosteriorArchive:
    names: Tuple[str, ...]
    samples: np.ndarray  # (chains, draws, d)
    log_density: np.ndarray  # (chains, draws)
    acceptance_rate: float
    rhat: np.ndarray
    crossover_probabilities: np.ndarray
    archive: np.ndarray = field(repr=False)

    @property
    def n_chains(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_draws(self) -> int:
        return int(self.samples.shape[1])

    def pooled(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[-1])

    def column(self, name: str) -> np.ndarray:
        return self.pooled()[:, self.names.index(name)]

    def converged(self, limit: float = 1.1) -> bool:
        return bool(np.all(np.isfinite(self.rhat)) and np.max(self.rhat) <= limit)


def split_rhat(chains: np.ndarray, circular: bool = False) -> float:
    """Split potential scale reduction factor for one coordinate, chains shaped (m, n).

    Circular coordinates are re-centred on their circular mean before the usual
    variance comparison, so a cloud straddling 0 = 2 pi is not split in two.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[1] < 4:
        raise ValueError("split R-hat needs an (m, n) array with n >= 4")
    if circular:
        mu = np.angle(np.mean(np.exp(1j * x)))
        x = np.mod(x - mu + np.pi, 2.0 * np.pi) - np.pi
    half = x.shape[1] // 2
    split = np.concatenate([x[:, :half], x[:, -half:]], axis=0)
    w = float(np.mean(np.var(split, axis=1, ddof=1)))
    b = half * float(np.var(np.mean(split, axis=1), ddof=1))
    if w <= 0.0:
        return 1.0 if b <= 0.0 else math.inf
    var_hat = (half - 1) / half * w + b / half
    return math.sqrt(var_hat / w)


@dataclass
class _Chain:
    x: np.ndarray
    logp: float
    rng: np.random.Generator


@dataclass
class _Step:
    x: np.ndarray
    logp: float
    accepted: bool
    cr_index: int  # -1 for snooker moves


class _Kernel:
    def __init__(self, log_density: LogDensity, bounds: Bounds, cfg: SamplerSettings, dim: int) -> None:
        self.f = log_density
        self.bounds = bounds
        self.cfg = cfg
        self.dim = dim

    def _jumps(
        self, rng: np.random.Generator, z: np.ndarray, n: int, cr: float, mode_jump: bool
    ) -> np.ndarray:
        d = self.dim
        mask = rng.random((n, d)) < cr
        empty = ~mask.any(axis=1)
        mask[empty, rng.integers(d, size=int(empty.sum()))] = True
        d_eff = mask.sum(axis=1)
        gamma = np.ones(n) if mode_jump else 2.38 / np.sqrt(2.0 * self.cfg.pairs * d_eff)
        diff = np.zeros((n, d))
        for i in range(n):
            idx = rng.choice(len(z), size=2 * self.cfg.pairs, replace=False)
            diff[i] = z[idx[: self.cfg.pairs]].sum(axis=0) - z[idx[self.cfg.pairs :]].sum(axis=0)
        e = rng.uniform(-self.cfg.jitter, self.cfg.jitter, size=(n, d))
        eps = rng.normal(0.0, self.cfg.noise, size=(n, d))
        return mask * ((1.0 + e) * gamma[:, None] * diff + eps)

    def parallel(self, chain: _Chain, z: np.ndarray, pcr: np.ndarray, mode_jump: bool) -> _Step:
        rng = chain.rng
        k = self.cfg.multi_try
        cr_index = int(rng.choice(len(pcr), p=pcr))
        cr = self.cfg.crossover[cr_index]

        y = self.bounds.fold(chain.x + self._jumps(rng, z, k, cr, mode_jump))
        logp_y = self.f(y)
        if not np.any(np.isfinite(logp_y)):
            return _Step(chain.x, chain.logp, False, cr_index)
        w = np.exp(logp_y - np.max(logp_y))
        j = int(rng.choice(k, p=w / w.sum()))

        if k > 1:
            ref = self.bounds.fold(y[j] + self._jumps(rng, z, k - 1, cr, mode_jump))
            logp_ref = np.append(self.f(ref), chain.logp)
        else:
            logp_ref = np.array([chain.logp])
        log_ratio = logsumexp(logp_y) - logsumexp(logp_ref)
        if np.log(rng.random()) < log_ratio:
            return _Step(y[j], float(logp_y[j]), True, cr_index)
        return _Step(chain.x, chain.logp, False, cr_index)

    def snooker(self, chain: _Chain, z: np.ndarray) -> _Step:
        rng = chain.rng
        idx = rng.choice(len(z), size=3, replace=False)
        anchor, z1, z2 = z[idx[0]], z[idx[1]], z[idx[2]]
        direction = chain.x - anchor
        norm2 = float(direction @ direction)
        if norm2 == 0.0:
            return _Step(chain.x, chain.logp, False, -1)
        proj = ((z1 - z2) @ direction) / norm2 * direction
        y = self.bounds.fold(chain.x + rng.uniform(1.2, 2.2) * proj)
        logp_y = float(self.f(y[None, :])[0])
        if not np.isfinite(logp_y):
            return _Step(chain.x, chain.logp, False, -1)
        dist_y = float(np.linalg.norm(y - anchor))
        if dist_y == 0.0:
            return _Step(chain.x, chain.logp, False, -1)
        log_ratio = logp_y - chain.logp + (self.dim - 1) * (math.log(dist_y) - 0.5 * math.log(norm2))
        if np.log(rng.random()) < log_ratio:
            return _Step(y, logp_y, True, -1)
        return _Step(chain.x, chain.logp, False, -1)

    def step(self, chain: _Chain, z: np.ndarray, pcr: np.ndarray, iteration: int) -> _Step:
        if chain.rng.random() < self.cfg.snooker_prob:
            return self.snooker(chain, z)
        return self.parallel(chain, z, pcr, mode_jump=(iteration % 5 == 4))


def _starting_chains(
    log_density: LogDensity, initial: np.ndarray, n_chains: int, rngs: List[np.random.Generator]
) -> List[_Chain]:
    logp = log_density(initial)
    finite = np.flatnonzero(np.isfinite(logp))
    if len(finite) < n_chains:
        raise ConvergenceError(
            f"only {len(finite)} of {len(initial)} initial states have finite log density; need {n_chains}"
        )
    return [_Chain(initial[i].copy(), float(logp[i]), rng) for i, rng in zip(finite[:n_chains], rngs)]


def sample(
    log_density: LogDensity,
    initial: np.ndarray,
    bounds: Bounds,
    cfg: SamplerSettings,
    rng_seed: int,
    names: Sequence[str],
    circular: Sequence[str] = (),
) -> PosteriorArchive:
    """Run `cfg.chains` chains; `initial` seeds the archive and the chain starting points.

    Raises ConvergenceError carrying the archive when split R-hat exceeds the limit
    on any coordinate (unless `cfg.check_convergence` is off).
    """
    initial = np.atleast_2d(np.asarray(initial, dtype=float))
    dim = initial.shape[1]
    if len(names) != dim:
        raise ValueError(f"{len(names)} names for {dim} coordinates")
    if len(initial) < max(3, 2 * cfg.pairs + 1):
        raise ValueError("archive needs more initial states than difference pairs")

    seeds = np.random.SeedSequence(rng_seed).spawn(cfg.chains)
    chains = _starting_chains(log_density, initial, cfg.chains, [np.random.default_rng(s) for s in seeds])
    kernel = _Kernel(log_density, bounds, cfg, dim)

    archive = [initial]
    z = initial
    n_cr = len(cfg.crossover)
    pcr = np.full(n_cr, 1.0 / n_cr)
    jump_sum = np.zeros(n_cr)
    jump_count = np.zeros(n_cr)

    kept = (cfg.iterations - cfg.burn_in) // cfg.thin
    samples = np.empty((cfg.chains, kept, dim))
    logps = np.empty((cfg.chains, kept))
    accepted = 0
    proposals = 0
    slot = 0

    workers = cfg.workers or config.settings.SAMPLER_WORKERS
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for it in range(cfg.iterations):
            snapshot = z
            pcr_now = pcr.copy()
            if pool is not None:
                steps = list(pool.map(lambda c: kernel.step(c, snapshot, pcr_now, it), chains))
            else:
                steps = [kernel.step(c, snapshot, pcr_now, it) for c in chains]

            in_burn = it < cfg.burn_in
            if in_burn:
                scale = np.std(snapshot, axis=0)
                scale[scale == 0.0] = 1.0
            for c, s in zip(chains, steps):
                if in_burn and s.cr_index >= 0:
                    jump_sum[s.cr_index] += float(np.sum(((s.x - c.x) / scale) ** 2))
                    jump_count[s.cr_index] += 1
                c.x, c.logp = s.x, s.logp
                if not in_burn:
                    accepted += int(s.accepted)
                    proposals += 1

            if in_burn and np.all(jump_count > 0) and jump_sum.sum() > 0:
                rate = jump_sum / jump_count
                pcr = np.maximum(rate / rate.sum(), 0.02)
                pcr /= pcr.sum()

            if (it + 1) % cfg.archive_every == 0:
                archive.append(np.stack([c.x for c in chains]))
                z = np.concatenate(archive)

            if not in_burn and (it - cfg.burn_in) % cfg.thin == 0 and slot < kept:
                for ci, c in enumerate(chains):
                    samples[ci, slot] = c.x
                    logps[ci, slot] = c.logp
                slot += 1
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    circ = set(circular)
    rhat = np.array([split_rhat(samples[:, :, i], circular=(n in circ)) for i, n in enumerate(names)])
    result = PosteriorArchive(
        names=tuple(names),
        samples=samples,
        log_density=logps,
        acceptance_rate=accepted / max(proposals, 1),
        rhat=rhat,
        crossover_probabilities=pcr,
        archive=np.concatenate(archive),
    )
    log.info(
        f"sampler finished: {cfg.chains} chains x {kept} draws, acceptance {result.acceptance_rate:.3f}, "
        f"max R-hat {np.max(rhat):.4f}"
    )
    log.debug(f"crossover probabilities {np.round(pcr, 3).tolist()}")
    if cfg.check_convergence and not result.converged(cfg.rhat_limit):
        worst = names[int(np.nanargmax(np.where(np.isfinite(rhat), rhat, np.inf)))]
        raise ConvergenceError(
            f"split R-hat {np.max(rhat):.3f} on {worst!r} exceeds {cfg.rhat_limit} after {cfg.iterations} iterations",
            partial=result,
        )
    return result

# nv-lambda/tests/test_sampler.py
from __future__ import annotations

import math

import numpy as np
import pytest
from pydantic import ValidationError

from nv_lambda.errors import ConvergenceError
from nv_lambda.sampler import Bounds, PosteriorArchive, SamplerSettings, sample, split_rhat

FAST = SamplerSettings(chains=4, multi_try=5, iterations=1500, burn_in=500)


def _gaussian(mean: np.ndarray, sd: np.ndarray):
    def log_density(x: np.ndarray) -> np.ndarray:
        return -0.5 * np.sum(((np.atleast_2d(x) - mean) / sd) ** 2, axis=1)

    return log_density


def test_split_rhat_of_well_mixed_chains():
    rng = np.random.default_rng(0)
    assert split_rhat(rng.normal(size=(4, 1000))) == pytest.approx(1.0, abs=0.01)


def test_split_rhat_flags_separated_chains():
    rng = np.random.default_rng(0)
    chains = rng.normal(size=(4, 500)) + np.arange(4)[:, None] * 3.0
    assert split_rhat(chains) > 1.1


def test_split_rhat_flags_drift_within_a_chain():
    drift = np.tile(np.linspace(0.0, 10.0, 400), (4, 1))
    assert split_rhat(drift) > 1.1


def test_split_rhat_circular_wraps_around_zero():
    rng = np.random.default_rng(1)
    raw = rng.normal(0.0, 0.1, size=(4, 1000))
    angles = np.mod(raw, 2 * math.pi)
    assert split_rhat(angles, circular=True) == pytest.approx(split_rhat(raw), rel=1e-9)
    assert split_rhat(angles, circular=True) == pytest.approx(1.0, abs=0.01)


def test_split_rhat_edge_cases():
    assert split_rhat(np.ones((4, 10))) == 1.0
    with pytest.raises(ValueError):
        split_rhat(np.ones((4, 3)))


def test_bounds_fold():
    b = Bounds.build([(0.0, 1.0), (0.0, 2 * math.pi), (0.0, math.inf), (-math.inf, math.inf)], [False, True])
    y = b.fold(np.array([[1.25, 2 * math.pi + 0.5, -3.0, 7.0], [-0.25, -0.5, 2.0, -7.0]]))
    assert y[0] == pytest.approx([0.75, 0.5, 3.0, 7.0])
    assert y[1] == pytest.approx([0.25, 2 * math.pi - 0.5, 2.0, -7.0])


def test_bounds_validation():
    with pytest.raises(ValueError):
        Bounds.build([(1.0, 0.0)])
    with pytest.raises(ValueError):
        Bounds.build([(0.0, math.inf)], [True])


def test_settings_validation():
    with pytest.raises(ValidationError):
        SamplerSettings(iterations=100, burn_in=100)
    with pytest.raises(ValidationError):
        SamplerSettings(iterations=100, burn_in=98)
    with pytest.raises(ValidationError):
        SamplerSettings(crossover=(0.0, 1.0))
    with pytest.raises(ValidationError):
        SamplerSettings(chains=1)
    assert SamplerSettings().archive_size(11) == 110


def test_sampler_recovers_a_gaussian():
    mean, sd = np.array([1.0, -2.0, 0.5]), np.array([0.5, 1.0, 2.0])
    rng = np.random.default_rng(3)
    initial = rng.uniform(-6, 6, size=(34, 3))
    bounds = Bounds.build([(-math.inf, math.inf)] * 3)
    result = sample(_gaussian(mean, sd), initial, bounds, FAST, 42, ["a", "b", "c"])
    pooled = result.pooled()
    assert pooled.shape == (4 * 1000, 3)
    assert np.allclose(pooled.mean(axis=0), mean, atol=0.25 * sd.max())
    assert np.allclose(pooled.std(axis=0), sd, rtol=0.25)
    assert result.converged()
    assert 0.05 < result.acceptance_rate < 0.95
    assert result.crossover_probabilities.sum() == pytest.approx(1.0)
    assert result.column("b").size == 4000


def test_sampler_is_reproducible_and_thread_independent():
    mean, sd = np.zeros(2), np.ones(2)
    initial = np.random.default_rng(0).normal(size=(25, 2))
    bounds = Bounds.build([(-math.inf, math.inf)] * 2)
    cfg = SamplerSettings(chains=3, multi_try=3, iterations=200, burn_in=100, check_convergence=False)
    a = sample(_gaussian(mean, sd), initial, bounds, cfg, 7, ["x", "y"])
    b = sample(_gaussian(mean, sd), initial, bounds, cfg, 7, ["x", "y"])
    c = sample(_gaussian(mean, sd), initial, bounds, cfg.model_copy(update={"workers": 3}), 7, ["x", "y"])
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.samples, c.samples)
    d = sample(_gaussian(mean, sd), initial, bounds, cfg, 8, ["x", "y"])
    assert not np.array_equal(a.samples, d.samples)


def test_samples_respect_the_bounds():
    initial = np.random.default_rng(0).uniform(0, 1, size=(30, 2))
    bounds = Bounds.build([(0.0, 1.0), (0.0, 1.0)])

    def flat(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        inside = np.all((x >= 0) & (x <= 1), axis=1)
        return np.where(inside, 0.0, -np.inf)

    result = sample(flat, initial, bounds, FAST, 1, ["u", "v"])
    pooled = result.pooled()
    assert pooled.min() >= 0.0 and pooled.max() <= 1.0
    assert pooled.mean(axis=0) == pytest.approx([0.5, 0.5], abs=0.05)


def test_thinning():
    initial = np.random.default_rng(0).normal(size=(25, 2))
    cfg = SamplerSettings(chains=2, multi_try=2, iterations=300, burn_in=100, thin=4, check_convergence=False)
    result = sample(_gaussian(np.zeros(2), np.ones(2)), initial, Bounds.build([(-9, 9)] * 2), cfg, 0, ["x", "y"])
    assert result.n_draws == 50
    assert result.n_chains == 2


def test_unconverged_run_carries_its_archive():
    def islands(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)[:, 0]
        inside = (np.mod(x, 10.0) < 1e-3) & (x >= 0.0) & (x < 40.0)
        return np.where(inside, 0.0, -np.inf)

    # one chain per island; the gaps are impassable
    initial = np.array([[0.0005], [10.0005], [20.0005], [30.0005]] * 2)
    cfg = SamplerSettings(chains=4, multi_try=2, iterations=20, burn_in=10)
    with pytest.raises(ConvergenceError) as e:
        sample(islands, initial, Bounds.build([(-5.0, 45.0)]), cfg, 0, ["x"])
    assert isinstance(e.value.partial, PosteriorArchive)
    assert e.value.partial.n_draws == 10


def test_starting_points_need_finite_density():
    initial = np.full((10, 1), 5.0)
    bounds = Bounds.build([(-9, 9)])

    def nowhere(x: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(x)), -np.inf)

    with pytest.raises(ConvergenceError, match="finite log density"):
        sample(nowhere, initial, bounds, FAST, 0, ["x"])
    with pytest.raises(ValueError, match="names"):
        sample(nowhere, initial, bounds, FAST, 0, ["x", "y"])

# nv-lambda/tests/test_tomography.py
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate, stats

from nv_lambda.errors import DataFormatError
from nv_lambda.quantum import SIGMA_X, BlochVector, bloch_from_spherical, qubit_density, spherical_from_bloch
from nv_lambda.sampler import SamplerSettings
from nv_lambda.tomography import (
    ANGLE_NAMES,
    ANGLE_SD,
    DIM,
    PARAM_NAMES,
    ForwardModel,
    TomographyData,
    TomographyParams,
    TomographyRecord,
    error_rotation_unitaries,
    expected_fluorescence,
    expected_fluorescence_batch,
    log_likelihood,
    log_prior,
    projections,
    projections_batch,
    read_tomography_data,
    reference_prior_density,
    sample_posterior,
    sample_prior,
    summarize_posterior,
    synthesize_tomography_data,
    write_posterior_samples,
    write_posterior_summary,
    write_tomography_csv,
)

STATE = BlochVector(0.5, 0.3, 0.6)
QUICK = SamplerSettings(chains=4, multi_try=7, iterations=1500, burn_in=750)


def _record(rid: str, projection: str, counts: float, shots: int = 1) -> TomographyRecord:
    return TomographyRecord(record_id=rid, projection=projection, counts=counts, shots=shots)  # type: ignore[arg-type]


def _random_params(rng: np.random.Generator) -> TomographyParams:
    angles = {k: float(v) for k, v in zip(ANGLE_NAMES, rng.normal(0.0, 0.2, len(ANGLE_NAMES)))}
    return TomographyParams(
        r=rng.uniform(0, 1), theta_b=rng.uniform(0, math.pi), phi_b=rng.uniform(0, 2 * math.pi),
        F0=rng.uniform(1e3, 1e5), C=rng.uniform(0, 1), **angles,
    )


def test_ideal_pulses_read_the_bloch_vector():
    p = TomographyParams.from_bloch(STATE, F0=1e5, C=0.84)
    assert projections(p) == pytest.approx((0.5, 0.3, 0.6), abs=1e-12)
    f = expected_fluorescence(p)
    assert f[2] == pytest.approx(1e5 * (1 - 0.42) + 1e5 * 0.42 * 0.6)


def test_params_array_layout():
    p = TomographyParams.from_bloch(STATE, F0=1e5, C=0.84, eps_y=0.01)
    v = p.as_array()
    assert v.shape == (DIM,)
    assert dict(zip(PARAM_NAMES, v))["eps_y"] == pytest.approx(0.01)
    assert TomographyParams.from_array(v) == p


def test_projections_stay_in_range_with_pulse_errors():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = _random_params(rng)
        assert all(-1.0 - 1e-12 <= e <= 1.0 + 1e-12 for e in projections(p))
        assert min(expected_fluorescence(p)) >= p.F0 * (1 - p.C) - 1e-6


def test_batch_forward_model_matches_the_unitaries():
    rng = np.random.default_rng(1)
    params = [_random_params(rng) for _ in range(40)]
    theta = np.stack([p.as_array() for p in params])
    batch = projections_batch(theta)
    single = np.array([projections(p) for p in params])
    assert np.allclose(batch, single, atol=1e-12)
    assert np.allclose(expected_fluorescence_batch(theta), [expected_fluorescence(p) for p in params], rtol=1e-12)


def test_tilted_x_pulse_keeps_the_sigma_x_eigenstate_to_second_order():
    def x_after_pulse(eps: float) -> float:
        u_x, _ = error_rotation_unitaries(TomographyParams(r=1.0, theta_b=0.0, phi_b=0.0, F0=1e5, C=0.84, eps_y=eps))
        rho = u_x @ qubit_density(np.array([1.0, 0.0, 0.0])) @ u_x.conj().T
        return float(np.real(np.trace(SIGMA_X @ rho)))

    eps = math.radians(5.0)
    assert 1.0 - x_after_pulse(eps) == pytest.approx(eps**2 / (1.0 + eps**2), rel=1e-9)
    assert (1.0 - x_after_pulse(eps)) / (1.0 - x_after_pulse(eps / 2)) == pytest.approx(4.0, rel=0.01)
    assert x_after_pulse(0.0) == pytest.approx(1.0, abs=1e-12)


def test_unit_vectors_synthesize_without_overshooting_r():
    rng = np.random.default_rng(12)
    for _ in range(50):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        b = BlochVector.from_array(v)
        data = synthesize_tomography_data(b, 1e5, 0.84, rng)
        assert len(data.records) == 5
        assert TomographyParams.from_bloch(b, F0=1e5, C=0.84).r <= 1.0
    r, _, _ = spherical_from_bloch(BlochVector(0.0, 0.0, 1.0 + 1e-12))
    assert r == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_likelihood_matches_the_sigma_marginal(seed: int):
    rng = np.random.default_rng(100 + seed)
    p = _random_params(rng)
    f = expected_fluorescence(p)[2]
    sigma_bar = 2.0 * math.sqrt(f)
    counts = max(f + rng.uniform(-6.0, 6.0) * sigma_bar, 0.0)
    data = TomographyData(records=(_record("z", "Z", counts),))

    def integrand(g: float) -> float:
        return stats.norm.pdf(counts, f, sigma_bar / math.sqrt(g)) * stats.gamma.pdf(g, 0.5)

    head, _ = integrate.quad(integrand, 0.0, 1.0, limit=200)
    tail, _ = integrate.quad(integrand, 1.0, np.inf, limit=200)
    assert math.exp(log_likelihood(data, p)) == pytest.approx(head + tail, rel=1e-6)


def test_far_tail_residuals_lose_two_log_two_per_doubling():
    p = TomographyParams.from_bloch(STATE, F0=1e5, C=0.84)
    f = expected_fluorescence(p)[2]
    sigma_bar = 2.0 * math.sqrt(f)
    near = TomographyData(records=(_record("z", "Z", f + 1000.0 * sigma_bar),))
    far = TomographyData(records=(_record("z", "Z", f + 2000.0 * sigma_bar),))
    assert log_likelihood(far, p) - log_likelihood(near, p) == pytest.approx(-2.0 * math.log(2.0), abs=1e-4)


def test_likelihood_ignores_record_order():
    rng = np.random.default_rng(8)
    data = synthesize_tomography_data(STATE, 1e5, 0.84, rng, repeats=3)
    shuffled = TomographyData(records=tuple(data.records[i] for i in rng.permutation(len(data.records))))
    p = TomographyParams.from_bloch(BlochVector(0.4, 0.2, 0.7), F0=9.5e4, C=0.8, eps_y=0.02)
    assert log_likelihood(shuffled, p) == pytest.approx(log_likelihood(data, p), rel=1e-12)


def test_likelihood_adds_over_records():
    p = TomographyParams.from_bloch(STATE, F0=1e5, C=0.84)
    a = TomographyData(records=(_record("x", "X", 70000.0),))
    b = TomographyData(records=(_record("y", "Y", 64000.0),))
    both = TomographyData(records=a.records + b.records)
    assert log_likelihood(both, p) == pytest.approx(log_likelihood(a, p) + log_likelihood(b, p))


def test_likelihood_requires_positive_fluorescence():
    data = TomographyData(records=(_record("n1", "NORM1", 10.0),))
    with pytest.raises(ValueError, match="positive"):
        log_likelihood(data, TomographyParams.from_bloch(STATE, F0=1e5, C=1.0))


def test_normalization_records_pin_f0_and_contrast():
    data = TomographyData(records=(_record("a", "NORM0", 0.0), _record("b", "NORM1", 0.0, shots=2)))
    model = ForwardModel(data)
    theta = TomographyParams.from_bloch(STATE, F0=1e5, C=0.84).as_array()
    # counts are predicted at the largest shot number in the dataset
    assert model.expected(theta)[0] == pytest.approx([0.5e5, 2 * 0.5e5 * 0.16])


def test_reference_prior_is_normalized():
    # substitute r = tanh(u); the sin(theta) factor integrates to 2 and phi to 2 pi
    radial, _ = integrate.quad(
        lambda u: float(reference_prior_density(math.tanh(u), math.pi / 2)) / math.cosh(u) ** 2, 0.0, 30.0, limit=200
    )
    assert radial * 2.0 * 2.0 * math.pi == pytest.approx(1.0, rel=1e-4)
    assert float(reference_prior_density(0.0, 1.0)) == 0.0
    assert float(reference_prior_density(1.0, 1.0)) == 0.0


def test_prior_draws_follow_the_reference_prior():
    draws = sample_prior(np.random.default_rng(5), 5000, 1e6)
    assert draws.shape == (5000, DIM)

    def r_cdf(r: float) -> float:
        u_max = math.atanh(min(r, 1 - 1e-15))
        return 8.0 / math.pi**3 * integrate.quad(lambda u: u * u / math.cosh(u), 0.0, u_max)[0]

    assert stats.kstest(draws[:, 0], np.vectorize(r_cdf)).pvalue > 0.01
    assert stats.kstest(np.cos(draws[:, 1]), stats.uniform(-1, 2).cdf).pvalue > 0.01
    assert stats.kstest(draws[:, 5], stats.norm(0, ANGLE_SD).cdf).pvalue > 0.01
    assert np.all((draws[:, 3] > 0) & (draws[:, 3] <= 1e6))


def test_log_prior_support():
    p = TomographyParams.from_bloch(STATE, F0=1e5, C=0.84)
    assert math.isfinite(log_prior(p, 1e6))
    assert log_prior(p, 1e4) == -math.inf
    assert log_prior(p.model_copy(update={"C": 1.5}), 1e6) == -math.inf
    shifted = p.model_copy(update={"eps_y": ANGLE_SD})
    assert log_prior(p, 1e6) - log_prior(shifted, 1e6) == pytest.approx(0.5)


def test_synthetic_records():
    data = synthesize_tomography_data(STATE, 1e5, 0.84, np.random.default_rng(0), repeats=2, noise="none")
    ids = [r.record_id for r in data.records]
    assert ids == ["X-0", "X-1", "Y-0", "Y-1", "Z-0", "Z-1", "NORM0-0", "NORM0-1", "NORM1-0", "NORM1-1"]
    counts = {r.record_id: r.counts for r in data.records}
    assert counts["NORM0-0"] == pytest.approx(1e5)
    assert counts["NORM1-1"] == pytest.approx(1e5 * 0.16)
    assert counts["X-0"] == pytest.approx(1e5 * (0.58 + 0.42 * 0.5))
    noisy = synthesize_tomography_data(STATE, 1e5, 0.84, np.random.default_rng(0), normalization=False)
    assert len(noisy.records) == 3
    assert all(r.counts == round(r.counts) >= 0 for r in noisy.records)


def test_records_are_validated():
    with pytest.raises(ValidationError):
        _record("a", "W", 1.0)
    with pytest.raises(ValidationError):
        _record("a", "X", -1.0)
    with pytest.raises(ValidationError):
        TomographyData(records=(_record("a", "X", 1.0), _record("a", "Y", 1.0)))
    with pytest.raises(ValidationError):
        TomographyData(records=())


def test_csv_roundtrip_and_row_numbers(tmp_path: Path):
    data = synthesize_tomography_data(STATE, 1e5, 0.84, np.random.default_rng(0))
    path = tmp_path / "records.csv"
    write_tomography_csv(path, data, "abc")
    assert read_tomography_data(path) == data

    bad = tmp_path / "bad.csv"
    bad.write_text("# comment\nrecord_id,projection,counts\nx1,X,10\nx2,Q,10\n", encoding="utf-8")
    with pytest.raises(DataFormatError) as e:
        read_tomography_data(bad)
    assert e.value.row == 4

    short = tmp_path / "short.csv"
    short.write_text("record_id,projection,counts\nx1,X\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="row 2"):
        read_tomography_data(short)

    dup = tmp_path / "dup.csv"
    dup.write_text("record_id,projection,counts\nx1,X,1\nx1,Y,2\n", encoding="utf-8")
    with pytest.raises(DataFormatError, match="x1"):
        read_tomography_data(dup)


def test_json_records(tmp_path: Path):
    path = tmp_path / "records.json"
    path.write_text(
        json.dumps({"records": [{"record_id": "z", "projection": "Z", "counts": 5, "shots": 2}]}), encoding="utf-8"
    )
    data = read_tomography_data(path)
    assert data.records[0].shots == 2
    path.write_text(json.dumps([{"record_id": "z", "projection": "Z", "counts": -5}]), encoding="utf-8")
    with pytest.raises(DataFormatError) as e:
        read_tomography_data(path)
    assert e.value.row == 1
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_tomography_data(path)
    with pytest.raises(DataFormatError, match="does not exist"):
        read_tomography_data(tmp_path / "missing.csv")


def test_posterior_recovers_a_synthetic_state(tmp_path: Path):
    data = synthesize_tomography_data(STATE, 1e5, 0.84, np.random.default_rng(3), repeats=3, noise="poisson")
    archive = sample_posterior(data, SamplerSettings(), rng_seed=11)
    assert archive.names == PARAM_NAMES
    assert archive.converged(1.1)
    summary = summarize_posterior(archive)
    for axis, true in zip("xyz", STATE.as_array()):
        assert abs(summary.bloch[axis].mean - true) < 0.15
    assert summary.fidelity.mean == pytest.approx(0.5 * (1 + STATE.r), abs=0.05)
    assert summary.n_samples == 4 * 2000

    samples = tmp_path / "posterior_samples.csv"
    write_posterior_samples(samples, archive, "abc")
    lines = samples.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# config_sha256: abc"
    assert lines[1].split(",")[:4] == ["chain", "draw", "log_density", "r"]
    assert len(lines) == 2 + 4 * 2000
    out = tmp_path / "posterior_summary.json"
    write_posterior_summary(out, summary, "abc")
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["config_sha256"] == "abc"
    assert set(doc["bloch"]) == {"x", "y", "z"}


def test_posterior_is_seeded():
    data = synthesize_tomography_data(STATE, 1e5, 0.84, np.random.default_rng(3))
    cfg = QUICK.model_copy(update={"iterations": 60, "burn_in": 30, "check_convergence": False})
    a = sample_posterior(data, cfg, rng_seed=4)
    b = sample_posterior(data, cfg, rng_seed=4)
    assert np.array_equal(a.samples, b.samples)


@pytest.mark.slow
def test_prior_only_sampling_reproduces_the_prior():
    data = synthesize_tomography_data(STATE, 1e5, 0.84, np.random.default_rng(0))
    cfg = SamplerSettings(chains=4, iterations=6000, burn_in=1000, thin=2)
    archive = sample_posterior(data, cfg, rng_seed=2, use_likelihood=False)
    r = archive.column("r")
    assert r.size == 10_000
    reference = sample_prior(np.random.default_rng(9), 10_000, 1.0)[:, 0]
    assert stats.ks_2samp(r, reference).statistic < 0.05


@pytest.mark.slow
def test_hpd_coverage_over_repeated_datasets():
    rng = np.random.default_rng(2024)
    cfg = QUICK.model_copy(update={"check_convergence": False})
    hits = np.zeros(3, dtype=int)
    truths = sample_prior(rng, 100, 1.0)
    for k, truth in enumerate(truths):
        bloch = bloch_from_spherical(truth[0], truth[1], truth[2])
        angles = dict(zip(ANGLE_NAMES, truth[5:]))
        data = synthesize_tomography_data(bloch, 1e5, 0.84, rng, angles=angles, repeats=2)
        summary = summarize_posterior(sample_posterior(data, cfg, rng_seed=k))
        for i, axis in enumerate("xyz"):
            hits[i] += summary.bloch[axis].contains(bloch.as_array()[i])
    assert np.all((hits >= 60) & (hits <= 76)), hits

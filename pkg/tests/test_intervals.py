# nv-lambda/tests/test_intervals.py
from __future__ import annotations

import math

import numpy as np
import pytest

from nv_lambda.intervals import circular_hpd_interval, circular_mean, hpd_interval


def test_hpd_of_a_uniform_grid():
    lo, hi = hpd_interval(np.arange(1000), mass=0.5)
    assert hi - lo == 499
    # ties resolve to the leftmost window
    assert lo == 0.0


def test_hpd_of_a_normal_sample():
    x = np.random.default_rng(0).normal(2.0, 1.0, size=200_000)
    lo, hi = hpd_interval(x, 0.682)
    assert lo == pytest.approx(1.0, abs=0.02)
    assert hi == pytest.approx(3.0, abs=0.02)


def test_hpd_hugs_the_mode_of_a_skewed_sample():
    x = np.random.default_rng(1).exponential(1.0, size=50_000)
    lo, hi = hpd_interval(x, 0.682)
    assert lo < 0.01
    assert hi == pytest.approx(-math.log(1 - 0.682), abs=0.03)


def test_hpd_input_checks():
    with pytest.raises(ValueError, match="mass"):
        hpd_interval(np.arange(200), mass=1.0)
    with pytest.raises(ValueError, match="at least"):
        hpd_interval(np.arange(50))
    with pytest.raises(ValueError, match="non-finite"):
        hpd_interval(np.append(np.arange(200.0), np.nan))


def test_circular_mean_across_zero():
    m = circular_mean([0.1, 2 * math.pi - 0.1])
    assert 0.0 <= m < 2 * math.pi
    assert min(m, 2 * math.pi - m) < 1e-12
    assert circular_mean([math.pi / 2]) == pytest.approx(math.pi / 2)


def test_circular_hpd_does_not_split_across_zero():
    x = np.mod(np.random.default_rng(2).normal(0.0, 0.2, size=20_000), 2 * math.pi)
    lo, hi = circular_hpd_interval(x, 0.682)
    assert hi - lo == pytest.approx(0.4, abs=0.02)
    assert hpd_interval(x, 0.682)[1] - hpd_interval(x, 0.682)[0] > 1.0

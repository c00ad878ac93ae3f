# nv-lambda/src/nv_lambda/intervals.py
from __future__ import annotations

import math
from typing import Sequence, Tuple

import numpy as np

MIN_SAMPLES = 100


def hpd_interval(samples: Sequence[float] | np.ndarray, mass: float = 0.682) -> Tuple[float, float]:
    """Shortest interval holding ceil(mass * N) of the sorted samples; ties go to the leftmost."""
    if not 0.0 < mass < 1.0:
        raise ValueError(f"mass must lie in (0, 1), got {mass}")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples for an HPD interval, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    k = max(1, math.ceil(mass * n - 1e-9))
    widths = x[k - 1 :] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def circular_hpd_interval(samples: Sequence[float] | np.ndarray, mass: float = 0.682) -> Tuple[float, float]:
    """HPD of an angle, computed around its circular mean; the bounds may leave [0, 2 pi)."""
    a = np.asarray(samples, dtype=float).ravel()
    mu = circular_mean(a)
    lo, hi = hpd_interval(np.mod(a - mu + math.pi, 2.0 * math.pi) - math.pi, mass)
    return mu + lo, mu + hi


def circular_mean(samples: Sequence[float] | np.ndarray) -> float:
    """Mean direction in [0, 2 pi)."""
    a = np.asarray(samples, dtype=float)
    return float(np.mod(np.angle(np.mean(np.exp(1j * a))), 2.0 * math.pi))

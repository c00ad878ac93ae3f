# nv-lambda/tests/test_units.py
from __future__ import annotations

import math

import pytest
from pydantic import BaseModel, ValidationError

from nv_lambda.units import TWO_PI, Angle, AngularFrequency, Duration, Rate, angle, angular_frequency, duration, rate


def test_cyclic_suffix_on_angular_frequency():
    assert angular_frequency("7.52 MHz") == pytest.approx(TWO_PI * 7.52)
    assert angular_frequency("2.19MHz") == pytest.approx(TWO_PI * 2.19)
    assert angular_frequency("1 GHz") == pytest.approx(TWO_PI * 1e3)
    assert angular_frequency("46.507 rad/us") == 46.507
    assert angular_frequency(-90) == -90.0


def test_rate_suffix_is_not_multiplied():
    assert rate("37 MHz") == 37.0
    assert rate("2.701 1/us") == 2.701
    assert rate("1e6 1/s") == pytest.approx(1.0)


def test_durations_and_angles():
    assert duration("13 ns") == pytest.approx(0.013)
    assert duration("1.13 us") == 1.13
    assert duration("2 ms") == 2000.0
    assert angle("90 deg") == pytest.approx(math.pi / 2)
    assert angle("pi rad") == pytest.approx(math.pi)
    assert angle("0.5 pi") == pytest.approx(0.5 * math.pi)


@pytest.mark.parametrize("bad", ["seven MHz", "7 furlongs", "", True, None])
def test_unparseable_quantities(bad):
    with pytest.raises(ValueError):
        angular_frequency(bad)


def test_annotated_types_in_models():
    class Probe(BaseModel):
        w: AngularFrequency
        g: Rate
        t: Duration
        a: Angle

    p = Probe(w="1 MHz", g="1 MHz", t="500 ns", a="180 deg")
    assert p.w == pytest.approx(TWO_PI)
    assert p.g == 1.0
    assert p.t == pytest.approx(0.5)
    assert p.a == pytest.approx(math.pi)
    assert Probe.model_validate(p.model_dump()) == p
    with pytest.raises(ValidationError):
        Probe(w="1 s", g=1, t=1, a=1)

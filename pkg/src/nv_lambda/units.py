# nv-lambda/src/nv_lambda/units.py
"""
Unit-suffixed quantities for config files.

Internal units: time in µs, angular frequency in rad/µs, rates in 1/µs, angles in rad.
Cyclic frequency suffixes (MHz, GHz, kHz) on an angular frequency are multiplied by 2π;
on a rate they are read as plain exponential rates.
"""
from __future__ import annotations

import math
import re
from typing import Annotated, Callable, Dict, Tuple

from pydantic import BeforeValidator, PlainSerializer

TWO_PI = 2.0 * math.pi

_QUANTITY = re.compile(
    r"^\s*(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*(?P<pi>pi|π)?\s*(?P<unit>[A-Za-zµμ°1/][A-Za-zµμ/°]*)?\s*$"
)

ANGULAR_UNITS: Dict[str, float] = {
    "rad/us": 1.0,
    "rad/µs": 1.0,
    "rad/ns": 1e3,
    "Mrad/s": 1.0,
    "MHz": TWO_PI,
    "GHz": TWO_PI * 1e3,
    "kHz": TWO_PI * 1e-3,
}
RATE_UNITS: Dict[str, float] = {
    "1/us": 1.0,
    "1/µs": 1.0,
    "1/ns": 1e3,
    "1/ms": 1e-3,
    "1/s": 1e-6,
    "MHz": 1.0,
    "GHz": 1e3,
    "kHz": 1e-3,
}
TIME_UNITS: Dict[str, float] = {"us": 1.0, "µs": 1.0, "μs": 1.0, "ns": 1e-3, "ms": 1e3, "s": 1e6}
ANGLE_UNITS: Dict[str, float] = {"rad": 1.0, "deg": math.pi / 180.0, "°": math.pi / 180.0}


def _split(text: str) -> Tuple[float, str | None]:
    m = _QUANTITY.match(text)
    if not m or (m.group("num") is None and m.group("pi") is None):
        raise ValueError(f"cannot parse quantity {text!r}")
    value = float(m.group("num")) if m.group("num") is not None else 1.0
    if m.group("pi"):
        value *= math.pi
    return value, m.group("unit")


def parse_quantity(value: object, table: Dict[str, float], kind: str) -> float:
    """Convert a number or unit-suffixed string to the internal unit of `kind`."""
    if isinstance(value, bool):
        raise ValueError(f"{kind} must be a number or a quantity string, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"{kind} must be a number or a quantity string, got {value!r}")
    number, unit = _split(value)
    if unit is None:
        return number
    unit = unit.replace("μ", "µ")
    if unit not in table:
        raise ValueError(f"unknown {kind} unit {unit!r} in {value!r}; expected one of {sorted(table)}")
    return number * table[unit]


def _parser(table: Dict[str, float], kind: str) -> Callable[[object], float]:
    def parse(value: object) -> float:
        return parse_quantity(value, table, kind)

    return parse


def angular_frequency(value: object) -> float:
    return parse_quantity(value, ANGULAR_UNITS, "angular frequency")


def rate(value: object) -> float:
    return parse_quantity(value, RATE_UNITS, "rate")


def duration(value: object) -> float:
    return parse_quantity(value, TIME_UNITS, "time")


def angle(value: object) -> float:
    return parse_quantity(value, ANGLE_UNITS, "angle")


_as_float = PlainSerializer(lambda v: float(v), return_type=float)

AngularFrequency = Annotated[float, BeforeValidator(_parser(ANGULAR_UNITS, "angular frequency")), _as_float]
Rate = Annotated[float, BeforeValidator(_parser(RATE_UNITS, "rate")), _as_float]
Duration = Annotated[float, BeforeValidator(_parser(TIME_UNITS, "time")), _as_float]
Angle = Annotated[float, BeforeValidator(_parser(ANGLE_UNITS, "angle")), _as_float]

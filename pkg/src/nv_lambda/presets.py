# nv-lambda/src/nv_lambda/presets.py
"""Named parameter sets shipped as package data (presets/lambda_presets.yaml)."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources
from typing import Dict, List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import config
from .errors import ConfigError
from .lindblad import DecayRates, LambdaParams
from .quantum import PLUS1, ZERO, DensityMatrix, bloch_from_spherical, ground_state_from_bloch
from .units import TWO_PI, Angle, _split, angular_frequency

Quantity = Union[str, float, int]
Nominal = Literal["0", "+1", "X", "-X"]


class InitialState(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    r: float = Field(ge=0.0, le=1.0)
    theta: Angle
    phi: Angle
    nominal: Nominal

    def measured(self) -> DensityMatrix:
        """The mixed input state characterised by tomography."""
        return ground_state_from_bloch(bloch_from_spherical(self.r, self.theta, self.phi))

    def ideal(self) -> DensityMatrix:
        return nominal_state(self.nominal)


class _PresetEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    delta_e1: Quantity
    delta_L: Quantity
    omega: Quantity
    theta: Quantity
    phi: Quantity
    gamma_rad: Quantity
    gamma_isc: Quantity
    gamma_isc_back: Quantity
    gamma_1: Quantity
    gamma_phi: Quantity
    state_a: InitialState
    state_b: InitialState


class Preset(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    params: LambdaParams
    rates: DecayRates
    state_a: InitialState
    state_b: InitialState


def nominal_state(label: Nominal) -> DensityMatrix:
    if label == "0":
        return DensityMatrix.basis(ZERO)
    if label == "+1":
        return DensityMatrix.basis(PLUS1)
    sign = 1.0 if label == "X" else -1.0
    return ground_state_from_bloch(np.array([sign, 0.0, 0.0]))


def _hamiltonian_entry(value: Quantity, convention: str) -> float:
    """Table "MHz" labels on Hamiltonian entries: rad/us (angular) or cyclic MHz."""
    if isinstance(value, str):
        number, unit = _split(value)
        if unit == "MHz":
            return number if convention == "angular" else TWO_PI * number
    return angular_frequency(value)


@lru_cache(maxsize=1)
def preset_table() -> Dict[str, dict]:
    text = resources.files("nv_lambda").joinpath("presets/lambda_presets.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def available_presets() -> List[str]:
    return sorted(preset_table())


def load_preset(name: str, convention: Optional[str] = None) -> Preset:
    table = preset_table()
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; available presets: {', '.join(available_presets())}")
    convention = convention or config.settings.PRESET_CONVENTION
    if convention not in ("angular", "cyclic"):
        raise ConfigError(f"preset convention must be 'angular' or 'cyclic', got {convention!r}")
    try:
        entry = _PresetEntry.model_validate(table[name])
        params = LambdaParams(
            delta_e1=_hamiltonian_entry(entry.delta_e1, convention),
            delta_L=_hamiltonian_entry(entry.delta_L, convention),
            omega=_hamiltonian_entry(entry.omega, convention),
            theta=entry.theta,
            phi=entry.phi,
        )
        rates = DecayRates(
            gamma_rad=entry.gamma_rad,
            gamma_isc=entry.gamma_isc,
            gamma_isc_back=entry.gamma_isc_back,
            gamma_1=entry.gamma_1,
            gamma_phi=entry.gamma_phi,
        )
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"preset {name!r} is invalid: {e}") from e
    return Preset(name=name, params=params, rates=rates, state_a=entry.state_a, state_b=entry.state_b)

# nv-lambda/src/nv_lambda/sequence.py
"""Pulse-sequence segments and the trace produced by running them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .lindblad import DecayRates, LambdaParams
from .quantum import DensityMatrix
from .units import Angle, AngularFrequency, Duration, Rate

PURIFIED_POLARIZATION = 0.92


class _Segment(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class GreenReset(_Segment):
    """Off-resonant reset into a ground mixture; `purified` adds the resonant clean-up pulse."""

    kind: Literal["green_reset"] = "green_reset"
    polarization: float = Field(default=0.8, ge=0.0, le=1.0)
    purified: bool = False

    @property
    def effective_polarization(self) -> float:
        return PURIFIED_POLARIZATION if self.purified else self.polarization


class EsrRotation(_Segment):
    kind: Literal["esr_rotation"] = "esr_rotation"
    axis_angle: Angle = 0.0
    rotation_angle: Angle


class OpticalDrive(_Segment):
    kind: Literal["optical_drive"] = "optical_drive"
    params: LambdaParams
    rates: DecayRates
    duration: Duration = Field(ge=0.0)


class FreePrecession(_Segment):
    kind: Literal["free_precession"] = "free_precession"
    duration: Duration = Field(ge=0.0)
    detuning: AngularFrequency = 0.0
    t2_star: Optional[Duration] = Field(default=1.0, gt=0.0)
    rates: Optional[DecayRates] = None


class ReadoutWindow(_Segment):
    kind: Literal["readout"] = "readout"
    duration: Duration = Field(default=0.4, ge=0.0)
    mode: Literal["DBP", "CyclingZ"] = "DBP"
    measured: bool = True
    params: Optional[LambdaParams] = None
    rates: Optional[DecayRates] = None
    cycling_rate: Optional[Rate] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def check_mode(self) -> "ReadoutWindow":
        if self.mode == "DBP" and (self.params is None or self.rates is None):
            raise ValueError("DBP readout needs the drive params and rates")
        if self.mode == "CyclingZ" and self.cycling_rate is None and self.rates is None:
            raise ValueError("CyclingZ readout needs cycling_rate or rates")
        return self

    @property
    def photon_rate(self) -> float:
        """CyclingZ photons per µs per unit |0_g> population."""
        if self.cycling_rate is not None:
            return self.cycling_rate
        assert self.rates is not None
        return self.rates.gamma_rad / 2.0


Segment = Annotated[
    Union[GreenReset, EsrRotation, OpticalDrive, FreePrecession, ReadoutWindow],
    Field(discriminator="kind"),
]


class HyperfineTriplet(BaseModel):
    """Shot-to-shot mixture over the three nuclear projections, weights (C1, 1, C2)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    omega_hf: AngularFrequency
    c1: float = Field(default=1.0, ge=0.0)
    c2: float = Field(default=1.0, ge=0.0)

    def members(self) -> List[Tuple[float, float]]:
        total = self.c1 + 1.0 + self.c2
        return [
            (self.c1 / total, -self.omega_hf),
            (1.0 / total, 0.0),
            (self.c2 / total, self.omega_hf),
        ]


class PulseSequence(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    segments: List[Segment] = Field(default_factory=list)
    shots: int = Field(default=1, gt=0)
    collection_efficiency: float = Field(default=1.0, gt=0.0, le=1.0)
    hyperfine: Optional[HyperfineTriplet] = None
    sample_step: Duration = Field(default=0.005, gt=0.0)

    @model_validator(mode="after")
    def check_measured(self) -> "PulseSequence":
        measured = [s for s in self.segments if isinstance(s, ReadoutWindow) and s.measured]
        if len(measured) > 1:
            raise ValueError(f"at most one measured readout window allowed, got {len(measured)}")
        return self

    @property
    def total_duration(self) -> float:
        return float(sum(getattr(s, "duration", 0.0) for s in self.segments))


@dataclass(frozen=True)
class SignalTrace:
    t: np.ndarray
    bloch: np.ndarray
    pl_rate: np.ndarray
    integrated_counts: float
    sampled_counts: int
    states: Tuple[DensityMatrix, ...]
    window: Optional[Tuple[int, int]] = None

    @property
    def final_state(self) -> DensityMatrix:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.t)

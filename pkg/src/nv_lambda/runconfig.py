# nv-lambda/src/nv_lambda/runconfig.py
"""
Per-run YAML configuration.

Every section rejects unknown keys. Physical quantities may carry unit suffixes
("7.52 MHz", "13 ns", "90 deg"); bare numbers are taken in the internal units
(µs, rad/µs, 1/µs, rad).
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .fitting import HahnParams, RamseyParams
from .lindblad import DecayRates, LambdaParams
from .logging_cfg import get_logger
from .presets import Preset, load_preset, nominal_state
from .quantum import DensityMatrix
from .sampler import SamplerSettings
from .sequence import PulseSequence
from .tomography import ANGLE_NAMES
from .units import Angle, AngularFrequency, Duration

log = get_logger(__name__)

StartState = Literal["0", "+1", "X", "-X", "mixed", "state_a", "state_b"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_default=True)


class ModelConfig(_Section):
    """A preset, optionally overridden key by key."""

    preset: Optional[str] = None
    convention: Optional[Literal["angular", "cyclic"]] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    rates: Dict[str, Any] = Field(default_factory=dict)

    def load(self, default_preset: Optional[str] = None) -> Optional[Preset]:
        name = self.preset or default_preset
        return load_preset(name, self.convention) if name else None

    def resolve(self, default_preset: Optional[str] = None) -> Tuple[LambdaParams, DecayRates]:
        preset = self.load(default_preset)
        base_p = preset.params.model_dump() if preset else {}
        base_r = preset.rates.model_dump() if preset else {}
        try:
            return (
                LambdaParams.model_validate({**base_p, **self.params}),
                DecayRates.model_validate({**base_r, **self.rates}),
            )
        except ValidationError as e:
            raise ConfigError(f"model: {_first_error(e)}") from e


class SequenceConfig(_Section):
    segments: List[Dict[str, Any]] = Field(default_factory=list)
    shots: int = Field(default=1, gt=0)
    collection_efficiency: float = Field(default=1.0, gt=0.0, le=1.0)
    hyperfine: Optional[Dict[str, Any]] = None
    sample_step: Duration = Field(default=0.005, gt=0.0)

    def build(self, params: LambdaParams, rates: DecayRates) -> PulseSequence:
        """Drive segments without their own params/rates inherit the model's."""
        segments = []
        for raw in self.segments:
            seg = dict(raw)
            kind = seg.get("kind")
            if kind == "optical_drive" or (kind == "readout" and seg.get("mode", "DBP") == "DBP"):
                seg.setdefault("params", params.model_dump())
            if kind in ("optical_drive", "readout"):
                seg.setdefault("rates", rates.model_dump())
            segments.append(seg)
        doc = {
            "segments": segments,
            "shots": self.shots,
            "collection_efficiency": self.collection_efficiency,
            "hyperfine": self.hyperfine,
            "sample_step": self.sample_step,
        }
        try:
            return PulseSequence.model_validate(doc)
        except ValidationError as e:
            raise ConfigError(f"sequence: {_first_error(e)}") from e


class SimulateConfig(_Section):
    t: Duration = Field(default=0.5, gt=0.0)
    points: int = Field(default=101, ge=2)
    start: StartState = "0"
    rotation_angle: Angle = math.pi


class SpectrumConfig(_Section):
    omega: AngularFrequency = Field(default=10.0, ge=0.0)
    theta: Angle = math.pi / 2.0
    phi: Angle = 0.0
    delta_L: AngularFrequency = 0.0
    centered_delta_L: Optional[AngularFrequency] = None
    span: AngularFrequency = Field(default=50.0, gt=0.0)
    points: int = Field(default=101, ge=3)


class RamseyConfig(_Section):
    T2_star: Duration = Field(default=1.13, gt=0.0)
    delta_omega: AngularFrequency = "7.52 MHz"  # type: ignore[assignment]
    omega_HF: AngularFrequency = "2.19 MHz"  # type: ignore[assignment]
    tau0: Duration = "13 ns"  # type: ignore[assignment]
    A: float = 253.0
    C1: float = Field(default=1.36, ge=0.0)
    C2: float = Field(default=0.64, ge=0.0)
    background: float = 0.0
    tau_max: Duration = Field(default=3.0, gt=0.0)
    points: int = Field(default=151, ge=2)
    shots: int = Field(default=1, gt=0)
    isc_background: float = Field(default=0.0, ge=0.0)
    pair: bool = False

    def params(self) -> RamseyParams:
        return RamseyParams(
            T2_star=self.T2_star,
            delta_omega=self.delta_omega,
            omega_HF=self.omega_HF,
            tau0=self.tau0,
            A=self.A,
            C1=self.C1,
            C2=self.C2,
            background=self.background,
        )


class HahnConfig(_Section):
    T2: Duration = Field(default=893.0, gt=0.0)
    A: float = 538.0
    background: float = 0.0
    tau_max: Duration = Field(default=2000.0, gt=0.0)
    points: int = Field(default=101, ge=2)
    shots: int = Field(default=1, gt=0)

    def params(self) -> HahnParams:
        return HahnParams(T2=self.T2, A=self.A, background=self.background)


class ReadoutConfig(_Section):
    window: Duration = Field(default=0.4, gt=0.0)
    shots: int = Field(default=1, gt=0)
    efficiency: float = Field(default=1.0, gt=0.0, le=1.0)
    branch: Literal["R", "L"] = "R"


class TomoSynthConfig(_Section):
    bloch: Tuple[float, float, float] = (0.5, 0.3, 0.6)
    F0: float = Field(default=1e5, gt=0.0)
    C: float = Field(default=0.84, ge=0.0, le=1.0)
    shots: int = Field(default=1, gt=0)
    repeats: int = Field(default=2, ge=1)
    noise: Literal["prior", "poisson", "none"] = "prior"
    normalization: bool = True
    angles: Dict[str, Angle] = Field(default_factory=dict)

    @field_validator("bloch")
    @classmethod
    def validate_bloch(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if math.sqrt(sum(c * c for c in v)) > 1.0 + 1e-9:
            raise ValueError(f"Bloch vector {v} is longer than 1")
        return v

    @field_validator("angles")
    @classmethod
    def validate_angles(cls, v: Dict[str, float]) -> Dict[str, float]:
        unknown = set(v) - set(ANGLE_NAMES)
        if unknown:
            raise ValueError(f"unknown systematic angles {sorted(unknown)}; expected {list(ANGLE_NAMES)}")
        return v


class TomographyConfig(_Section):
    data: Optional[str] = None
    sampler: SamplerSettings = Field(default_factory=SamplerSettings)
    mass: float = Field(default=0.682, gt=0.0, lt=1.0)
    use_likelihood: bool = True
    synth: TomoSynthConfig = Field(default_factory=TomoSynthConfig)


class FitConfig(_Section):
    data: Optional[str] = None
    init: Dict[str, Any] = Field(default_factory=dict)
    fixed: List[str] = Field(default_factory=list)
    scale_covariance: bool = True
    multistart: bool = True
    curve_points: int = Field(default=1000, ge=2)
    max_nfev: int = Field(default=5000, ge=10)


class RunConfig(_Section):
    seed: Optional[int] = Field(default=None, ge=0)
    output: Optional[str] = None
    model: ModelConfig = Field(default_factory=ModelConfig)
    simulate: SimulateConfig = Field(default_factory=SimulateConfig)
    sequence: Optional[SequenceConfig] = None
    spectrum: SpectrumConfig = Field(default_factory=SpectrumConfig)
    ramsey: RamseyConfig = Field(default_factory=RamseyConfig)
    hahn: HahnConfig = Field(default_factory=HahnConfig)
    readout: ReadoutConfig = Field(default_factory=ReadoutConfig)
    tomography: TomographyConfig = Field(default_factory=TomographyConfig)
    fit: FitConfig = Field(default_factory=FitConfig)

    def fit_init(self, model: Literal["ramsey", "hahn"]) -> RamseyParams | HahnParams:
        """Starting values: the synthesis defaults, overridden by `fit.init`."""
        base = self.ramsey.params() if model == "ramsey" else self.hahn.params()
        try:
            return type(base).model_validate({**base.model_dump(), **self.fit.init})
        except ValidationError as e:
            raise ConfigError(f"fit.init: {_first_error(e)}") from e


def initial_state(start: StartState, preset: Optional[Preset]) -> DensityMatrix:
    if start == "mixed":
        return DensityMatrix.maximally_mixed_ground()
    if start in ("state_a", "state_b"):
        if preset is None:
            raise ConfigError(f"start {start!r} needs a preset")
        return (preset.state_a if start == "state_a" else preset.state_b).measured()
    return nominal_state(start)  # type: ignore[arg-type]


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    loc = ".".join(str(x) for x in err["loc"])
    return f"{loc}: {err['msg']}" if loc else str(err["msg"])


def _set_dotted(doc: Dict[str, Any], key: str, value: Any) -> None:
    node = doc
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"cannot set {key!r}: {part!r} is not a section")
        node = child
    node[parts[-1]] = value


def load_run_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Read YAML (if given), apply dotted-key overrides, validate."""
    doc: Dict[str, Any] = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file {path} does not exist") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config file {path} is not valid YAML: {e}") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping at the top level")
        doc = loaded
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(doc, key, value)
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {_first_error(e)}") from e
    log.debug(f"run config loaded from {path or '<defaults>'} with {len(overrides or {})} overrides")
    return cfg

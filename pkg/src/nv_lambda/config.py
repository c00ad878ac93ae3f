# nv-lambda/src/nv_lambda/config.py
from __future__ import annotations

import logging
from pathlib import Path
from typing import Literal

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

    # Output folders
    OUTPUT_DIR: str = "./runs"

    # Logging
    LOG_FILE: str = "nv_lambda.log"
    LOG_JSONL: str = "runs.jsonl"
    LOG_LEVEL: str = "INFO"

    # Reproducibility
    DEFAULT_SEED: int = 0

    # Parallelism
    SAMPLER_WORKERS: int = 1
    SEQUENCE_WORKERS: int = 4

    # How the "MHz" Hamiltonian entries of the shipped presets are read
    PRESET_CONVENTION: Literal["angular", "cyclic"] = "angular"

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_level(cls, v: str) -> str:
        v = v.upper()
        if not isinstance(logging.getLevelName(v), int):
            raise ValueError(f"LOG_LEVEL must be a logging level name, got {v!r}")
        return v

    @field_validator("SAMPLER_WORKERS", "SEQUENCE_WORKERS")
    @classmethod
    def validate_workers(cls, v: int) -> int:
        if v < 1:
            raise ValueError("worker counts must be >= 1")
        return v


settings = Settings()


def ensure_dirs() -> None:
    Path(settings.OUTPUT_DIR).mkdir(parents=True, exist_ok=True)
    Path(settings.LOG_FILE).parent.mkdir(parents=True, exist_ok=True)
    Path(settings.LOG_JSONL).parent.mkdir(parents=True, exist_ok=True)


def reload_from_env(env_path: str | None = None) -> None:
    """Reload settings from .env, e.g. after a test changed the environment."""
    global settings
    settings = Settings(_env_file=env_path) if env_path else Settings()  # type: ignore
    ensure_dirs()

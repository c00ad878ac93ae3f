# nv-lambda/src/nv_lambda/errors.py
from __future__ import annotations

from typing import Any, Optional


class NvLambdaError(Exception):
    """Base class for every error raised by nv_lambda."""


class InvariantError(NvLambdaError):
    """A state or operator violates its invariants beyond numerical tolerance."""


class ConvergenceError(NvLambdaError):
    """An iterative procedure did not converge. `partial` holds whatever was produced."""

    def __init__(self, message: str, partial: Optional[Any] = None) -> None:
        super().__init__(message)
        self.partial = partial


class FitError(NvLambdaError):
    """A fit cannot proceed. `bad_input` separates unusable data from optimizer failure."""

    def __init__(self, message: str, bad_input: bool = False) -> None:
        super().__init__(message)
        self.bad_input = bad_input


class ConfigError(NvLambdaError, ValueError):
    pass


class DataFormatError(NvLambdaError, ValueError):
    def __init__(self, message: str, row: Optional[int] = None) -> None:
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row

"""
Custom exceptions for bigat.

Expose a small, predictable hierarchy so callers can:
- catch a broad BigatError for anything raised by the package, or
- catch specific errors for targeted handling (e.g., a malformed track file).
"""

from __future__ import annotations

from typing import Optional, Sequence


__all__ = [
    "BigatError",
    "DimensionError",
    "NumericError",
    "ContractError",
    "DeterminismError",
    "TrackParseError",
    "GridFormatError",
    "CheckpointError",
    "ConfigError",
    "DatasetFetchError",
]


class BigatError(Exception):
    """Base class for all bigat-specific errors."""

    pass


class DimensionError(BigatError, ValueError):
    """Raised when array shapes do not conform for an operation."""

    def __init__(
        self,
        message: str,
        *,
        op: Optional[str] = None,
        shapes: Sequence[tuple[int, ...]] = (),
    ) -> None:
        super().__init__(message)
        self.op = op
        self.shapes = list(shapes)


class NumericError(BigatError, ArithmeticError):
    """Raised when a forward value is NaN or infinite."""

    def __init__(self, message: str, *, op: Optional[str] = None) -> None:
        super().__init__(message)
        self.op = op


class ContractError(BigatError, ValueError):
    """Raised when a call violates an operation's pre-conditions."""

    pass


class DeterminismError(BigatError):
    """Raised when a function under gradient check changes on re-evaluation."""

    pass


class TrackParseError(BigatError, ValueError):
    """
    Raised for a malformed line in a ``frame ped x y`` track file.

    ``line_number`` is 1-based so it matches what an editor shows.
    """

    def __init__(
        self,
        message: str,
        *,
        path: Optional[str] = None,
        line_number: Optional[int] = None,
        line: Optional[str] = None,
    ) -> None:
        super().__init__(message)
        self.path = path
        self.line_number = line_number
        self.line = line


class GridFormatError(BigatError, ValueError):
    """Raised when a feature grid file does not follow the GRID header format."""

    pass


class CheckpointError(BigatError):
    """Raised when a checkpoint is truncated, has a bad magic, or mismatches the store."""

    pass


class ConfigError(BigatError, KeyError):
    """
    Raised for unknown, duplicated or invalid configuration keys.

    Inherit from KeyError to feel natural in 'lookup' code paths.
    """

    def __init__(
        self,
        message: str,
        *,
        key: Optional[str] = None,
        suggestions: Optional[list[str]] = None,
    ) -> None:
        super().__init__(message)
        self.key = key
        self.suggestions = suggestions or []

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""


class DatasetFetchError(BigatError, RuntimeError):
    """Raised when the dataset manifest or a downloaded file fails validation."""

    pass

"""
Error hierarchy shared by every subpackage.

Each class carries the process exit code the CLI maps it to:

    configuration -> 2, data -> 3, divergence -> 4, io/persistence -> 5
"""

from __future__ import annotations

from typing import Any, Iterable, Optional


class AdvXferError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1


class ConfigurationError(AdvXferError):
    """Invalid configuration, detected before any compute."""

    exit_code = 2


class DimensionError(AdvXferError, ValueError):
    """Operator called with incompatible tensor shapes."""

    exit_code = 2

    def __init__(self, op: str, message: str, axes: Iterable[str] = ()) -> None:
        self.op = op
        self.axes = tuple(axes)
        axes_txt = f" (axes: {', '.join(self.axes)})" if self.axes else ""
        super().__init__(f"{op}: {message}{axes_txt}")


class ContractError(AdvXferError, ValueError):
    """A precondition of an operation does not hold."""

    exit_code = 2


class DataError(AdvXferError):
    """Missing or unusable dataset."""

    exit_code = 3


class GenerationError(DataError):
    """The procedural renderer was given a degenerate request."""


class IntegrityError(DataError):
    """Manifest and files on disk disagree."""

    def __init__(self, message: str, missing: Iterable[str] = (), unexpected: Iterable[str] = ()) -> None:
        self.missing = sorted(missing)
        self.unexpected = sorted(unexpected)
        details = []
        if self.missing:
            details.append(f"missing: {', '.join(self.missing)}")
        if self.unexpected:
            details.append(f"not in manifest: {', '.join(self.unexpected)}")
        super().__init__(message + ("; " + "; ".join(details) if details else ""))


class DivergenceError(AdvXferError):
    """Training produced a non-finite loss or gradient."""

    exit_code = 4

    def __init__(self, message: str, trace: Optional[Any] = None) -> None:
        self.trace = trace
        super().__init__(message)


class PersistenceError(AdvXferError):
    """Reading or writing an artifact failed."""

    exit_code = 5
    code = "io"


class CheckpointFormatError(PersistenceError):
    code = "format"


class CheckpointVersionError(PersistenceError):
    code = "version"


class CheckpointTruncatedError(PersistenceError):
    code = "truncated"


class ChecksumError(PersistenceError):
    code = "checksum"


class CacheCollisionError(PersistenceError):
    code = "cache-collision"

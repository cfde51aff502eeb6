"""Exception hierarchy shared across the package."""

from __future__ import annotations


class DdnError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DdnError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(DdnError, ArithmeticError):
    """An operation produced NaN or Inf."""


class UsageError(DdnError, ValueError):
    """A call violated a documented precondition."""


class RangeError(DdnError, IndexError):
    """An identifier is outside its valid range."""


class FormatError(DdnError, ValueError):
    """A binary or text file is malformed.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(DdnError, ValueError):
    """File contents parse but violate a semantic constraint."""


class GenerationError(DdnError, RuntimeError):
    """Synthetic task or demonstration sampling gave up."""


class PlannerError(DdnError, RuntimeError):
    """The search could not produce a plan of the requested horizon."""


class CapacityError(DdnError, ValueError):
    """Problem size exceeds what the exact solver supports."""


class ConfigError(DdnError, ValueError):
    """Unknown or malformed configuration key."""

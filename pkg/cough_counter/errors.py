"""
Exception hierarchy for the cough counter.

Most errors derive from ValueError so callers that only care about bad input
can keep catching the built-in.
"""

from typing import List, Optional, Sequence


class CoughCounterError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CoughCounterError, ValueError):
    """Input data violates a documented invariant."""


class AnnotationError(ValidationError):
    """One or more annotation rows are malformed, overlapping or out of range."""

    def __init__(self, message: str, rows: Optional[Sequence[int]] = None):
        self.rows: List[int] = list(rows or [])
        if self.rows:
            message = f"{message} (rows: {', '.join(str(r) for r in self.rows)})"
        super().__init__(message)


class AudioFormatError(CoughCounterError, ValueError):
    """An audio file could not be decoded as a supported WAV."""


class UnsupportedRateError(ValidationError):
    """Source sample rate is too low to be brought to 10 kHz."""


class ConfigurationError(ValidationError):
    """Run configuration, channels or artifact catalogs do not agree."""


class SelectionError(ValidationError):
    """Feature selection cannot satisfy the requested size."""


class TrainingError(ValidationError):
    """Training data is unusable (for example a class is missing)."""


class NumericError(CoughCounterError, ArithmeticError):
    """Non-finite values were found where finite values are required."""

"""
Exception hierarchy shared by the network, calibration, fitting and I/O layers.
"""

from typing import Optional


class ResokitError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(ResokitError, ValueError):
    """An argument is out of its documented range."""


class NumericError(ResokitError, ArithmeticError):
    """A zero denominator or degenerate network was hit."""

    def __init__(self, message: str, index: Optional[int] = None):
        if index is not None:
            message = f"{message} (frequency index {index})"
        super().__init__(message)
        self.index = index


class RangeError(ResokitError, ValueError):
    """Requested data lies outside the available span."""


class FitError(ResokitError):
    """A fit did not converge or its input holds no usable resonance."""

    def __init__(self, message: str, residual: Optional[float] = None):
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
        self.residual = residual


class ConditioningError(FitError):
    """The SOL system is singular or ill-conditioned at some frequency."""

    def __init__(self, message: str, frequency: Optional[float] = None):
        if frequency is not None:
            message = f"{message} at {frequency:.6e} Hz"
        super().__init__(message)
        self.frequency = frequency


class IdentifiabilityError(FitError):
    """The data cannot constrain a requested parameter."""


class ParseError(ResokitError, ValueError):
    """Malformed input text; `line` is 1-based."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

"""Exception hierarchy shared by every module.

The CLI maps ``ValidationError`` to exit code 1 and ``NumericError`` /
``SamplerError`` to exit code 2.
"""

from sklearn.exceptions import NotFittedError


class ValidationError(ValueError):
    """Bad user input: wrong shapes, out-of-range values, malformed files."""


class ParseError(ValidationError):
    """A file could not be parsed; carries the line number or byte offset."""

    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class NumericError(ArithmeticError):
    """A non-finite intermediate appeared where a finite value is required."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} (observation {index})"
        super().__init__(message)
        self.index = index


class SamplerError(RuntimeError):
    """Base class for MCMC failures."""


class InitError(SamplerError):
    pass


class DivergenceError(SamplerError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


__all__ = [
    "ValidationError",
    "ParseError",
    "NumericError",
    "SamplerError",
    "InitError",
    "DivergenceError",
    "NotFittedError",
]

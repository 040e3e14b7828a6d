"""Exception types raised across the package."""


class GlodError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(GlodError, ValueError):
    """An argument violates an operation's precondition."""


class UnknownConditionError(GlodError, KeyError):
    """A denoiser was asked about a condition it was not built with."""

    def __str__(self) -> str:
        return Exception.__str__(self)


class IncompletePredictionsError(GlodError, KeyError):
    """A composition was handed a prediction map that lacks a needed condition."""

    def __str__(self) -> str:
        return Exception.__str__(self)


class NumericDivergenceError(GlodError, FloatingPointError):
    """A sampling chain produced a non-finite value."""

    def __init__(self, step: int, what: str = "sample"):
        super().__init__(f"non-finite {what} at step t={step}")
        self.step = step
        self.what = what


class FormatError(GlodError, ValueError):
    """A file could not be parsed."""

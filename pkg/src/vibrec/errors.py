"""Exception hierarchy shared across the package.

Four error classes map onto CLI exit codes: configuration (bad settings or
incompatible requests), data (unusable input), numerical (diverged or failed
computation), and I/O (filesystem trouble, raised as plain OSError).
"""


class VibrecError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VibrecError):
    """A setting or combination of settings is invalid."""


class DataError(VibrecError):
    """Input data violates a contract (parse failures, bad shapes of files)."""


class ParseError(DataError):
    """A record file could not be parsed; message names the offending line."""


class DegenerateChannelError(DataError):
    """A channel has zero range and cannot be min-max normalized."""


class InsufficientDataError(DataError):
    """Record too short for the requested windowing."""


class DimensionError(VibrecError):
    """Vector or matrix dimensions do not agree."""


class ShapeError(VibrecError):
    """A layer geometry is not realizable (non-integral output size)."""


class StateError(VibrecError):
    """An operation was invoked out of order (e.g. backward before forward)."""


class NumericalError(VibrecError):
    """A numerical routine failed to converge."""


class DivergenceError(NumericalError):
    """Training loss became non-finite; carries the offending epoch."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class UndefinedMACError(VibrecError):
    """MAC requested for a zero-length or zero-norm mode shape."""

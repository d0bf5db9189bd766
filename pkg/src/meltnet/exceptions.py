"""Exception types shared across the package."""


class MeltnetError(Exception):
    """Base class for all package errors."""


class DimensionError(MeltnetError, ValueError):
    """Array shapes do not line up; the message names the offending axis."""


class BackwardStateError(MeltnetError, RuntimeError):
    """``backward`` was called on a graph that has already been consumed."""


class NonFiniteGradientError(MeltnetError, FloatingPointError):
    def __init__(self, parameter: str):
        super().__init__(f"non-finite gradient in parameter {parameter!r}")
        self.parameter = parameter


class ConfigurationError(MeltnetError, ValueError):
    """Inconsistent or invalid configuration."""


class SimulationInstabilityError(MeltnetError, FloatingPointError):
    """The explicit solver produced NaN or runaway temperatures."""


class TrainingDivergedError(MeltnetError, FloatingPointError):
    """Training loss became non-finite. ``last_good`` holds the last finite checkpoint."""

    def __init__(self, message: str, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class EmptyPoolError(MeltnetError, ValueError):
    """No temperatures above the melting point to take a percentile over."""


class FormatError(MeltnetError, ValueError):
    """Base class for on-disk format problems."""


class VersionMismatchError(FormatError):
    pass


class TruncatedBlobError(FormatError):
    pass


class ChecksumError(FormatError):
    pass

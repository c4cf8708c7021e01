"""Exception types shared across the package."""


class MeanFieldError(Exception):
    """Base class for all package errors."""


class ConfigError(MeanFieldError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalFailure(MeanFieldError, ArithmeticError):
    """Base for failures the CLI maps to exit code 3."""


class NonIntegrableSingularity(MeanFieldError, ValueError):
    """Kernel family / dimension pair without a finite periodization."""


class DivergentIntegral(MeanFieldError, ArithmeticError):
    """A requested kernel integral is infinite."""


class NonFiniteState(NumericalFailure):
    """A particle coordinate became NaN or infinite."""

    def __init__(self, message, step=None, replica=None, snapshot=None):
        super().__init__(message)
        self.step = step
        self.replica = replica
        self.snapshot = snapshot


class CFLViolation(NumericalFailure):
    pass


class CorruptCheckpoint(MeanFieldError, IOError):
    pass


class GridTooCoarse(MeanFieldError, ValueError):
    pass


class GridMismatch(MeanFieldError, ValueError):
    pass


class WeightOverflow(NumericalFailure):
    pass


class ExponentViolation(MeanFieldError, ValueError):
    pass


class OutOfRegime(MeanFieldError, ValueError):
    """Time lies outside the window where a closed-form bound is proved."""


class BoundOverflow(MeanFieldError, OverflowError):
    """A bound term exceeds the float range."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class MissingData(MeanFieldError, FileNotFoundError):
    pass


class NegativeOvershoot(UserWarning):
    """Spline interpolation produced a noticeably negative density value."""

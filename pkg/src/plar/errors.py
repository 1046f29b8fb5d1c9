"""Exception hierarchy shared by all modules."""


class PlarError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(PlarError, ValueError):
    """An argument violates a documented precondition."""


class StabilityError(PlarError, ValueError):
    """The autoregressive polynomial has a root on or outside the unit circle."""


class DegenerateInputError(PlarError, ValueError):
    """Data-dependent computation is undefined for the given data (e.g. zero variance)."""


class NumericalDegeneracyError(PlarError, ArithmeticError):
    """A linear system is singular or too ill-conditioned to solve reliably."""

    def __init__(self, message: str, condition_number: float | None = None):
        super().__init__(message)
        self.condition_number = condition_number


class InsufficientDataError(PlarError, ValueError):
    """Too few observations for the requested statistic."""

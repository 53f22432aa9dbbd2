"""Exception hierarchy shared by all hecop modules."""

from __future__ import annotations


class HecopError(Exception):
    """Base class for every error raised by hecop."""


class InvalidArgumentError(HecopError, ValueError):
    pass


class UnsupportedRankError(InvalidArgumentError):
    pass


class SingularInputError(HecopError, ValueError):
    """An argument sits on a reflecting hyperplane or a coth pole."""


class NumericFailureError(HecopError, ArithmeticError):
    pass


class UnreliableEstimateError(NumericFailureError):
    """Importance sampling produced too few effective draws."""


class StepFailureError(NumericFailureError):
    """The adaptive integrator could not make progress.

    Carries the process time reached and, when known, the replica index.
    """

    def __init__(self, message: str, time: float, replica: int | None = None):
        super().__init__(message)
        self.time = time
        self.replica = replica

    def __str__(self) -> str:
        base = super().__str__()
        where = f"t={self.time:.6g}"
        if self.replica is not None:
            where += f", replica={self.replica}"
        return f"{base} ({where})"

"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so keep the split between
validation/domain problems and convergence failures intact.
"""


class RateDistError(Exception):
    """Base class for all errors raised by this package."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class ValidationError(RateDistError, ValueError):
    """Input object violates its invariants."""


class DomainError(RateDistError, ValueError):
    """Argument outside the domain of the operation."""


class InfeasibleError(DomainError):
    """Budget/target cannot be met (e.g. distortion above total variance)."""


class NumericalDegeneracyError(RateDistError, ArithmeticError):
    """A normalizer underflowed or a computation became ill-posed."""


class ConvergenceError(RateDistError, RuntimeError):
    """Iteration limit reached before the stopping rule was met."""

"""Exception types raised across the package."""

from __future__ import annotations


class SaviError(Exception):
    """Base class for all package errors."""


class CycleDetected(SaviError, ValueError):
    pass


class DanglingEdge(SaviError, ValueError):
    pass


class DimensionMismatch(SaviError, ValueError):
    pass


class GuardExceeded(SaviError, ValueError):
    """Problem size is beyond what a brute-force routine is allowed to handle."""


class SingularSystem(SaviError, ArithmeticError):
    pass


class ConfigInvalid(SaviError, ValueError):
    pass


class NumericalError(SaviError, ArithmeticError):
    """Base for failures that happen while iterating (CLI exit code 2)."""


class DivergenceDetected(NumericalError):
    """A latent became non-finite. The offending state is kept on ``.state``."""

    def __init__(self, msg, state=None, node=None):
        super().__init__(msg)
        self.state = state
        self.node = node


class BudgetExceeded(NumericalError):
    def __init__(self, msg, evals=None):
        super().__init__(msg)
        self.evals = evals


class DegenerateGradient(NumericalError):
    """A reciprocal-Jacobian denominator is too close to zero."""

    def __init__(self, msg, indices=()):
        super().__init__(msg)
        self.indices = list(indices)


class NonPositiveLambda(UserWarning):
    """Warning category: an equivalent lambda map has entries <= 0."""

"""Exception hierarchy shared across the package."""


class IupfError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(IupfError, ValueError):
    """A caller supplied an argument outside the documented domain."""


class NumericsError(IupfError, ArithmeticError):
    """Non-finite data or a failed matrix factorization."""


class OutOfDomainError(IupfError, ValueError):
    """A query point lies beyond the field grid's clamp band."""


class ConvergenceError(IupfError, RuntimeError):
    """An iterative solver hit its cap without reaching tolerance.

    Carries whatever partial result was available so callers can inspect it.
    """

    def __init__(self, message, *, residual=None, partial=None):
        super().__init__(message)
        self.residual = residual
        self.partial = partial


class InstabilityError(IupfError, RuntimeError):
    """A time-stepping scheme diverged; retry with a smaller step."""


class ScenarioError(IupfError, ValueError):
    """A scenario file failed to parse or violated its invariants."""

    def __init__(self, message, *, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])

"""Shared exception types."""


class ConfigurationError(ValueError):
    """A config document, geometric precondition, or argument contract is violated."""


class NonConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    Carries the last relative residual and the iteration count so callers
    can report how far the solve got.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericBreakdownError(RuntimeError):
    """Non-finite values or an indefinite operator were detected mid-solve."""


class SingularMatrixError(RuntimeError):
    """A dense factorization found the matrix singular to working precision."""

"""Exception types shared across the package.

Validation failures map to CLI exit code 1, numerical failures to 2.
"""


class ValidationError(ValueError):
    """Inputs violate a documented precondition or invariant."""


class NumericalError(RuntimeError):
    """A numerical operation produced an unusable result."""


class SolverConvergenceError(NumericalError):
    """An iterative solver stopped without reaching its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations

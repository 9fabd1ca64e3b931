"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument is outside the documented domain of an operation."""


class PreconditionError(ValueError):
    """An input field violates a structural precondition (e.g. nonzero trace)."""


class MeshDegeneracyError(RuntimeError):
    """Assembly produced a singular or indefinite system."""


class NumericalConsistencyError(RuntimeError):
    """A quantity that is nonnegative in exact arithmetic came out negative."""


class NonconvergenceError(RuntimeError):
    """The resolvent solver hit its iteration limit.

    The last residual is kept on the exception so callers can report it.
    """

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations

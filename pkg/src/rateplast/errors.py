"""Exception hierarchy shared by all solver modules."""


class RatePlastError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(RatePlastError, ValueError):
    pass


class MeshFormatError(RatePlastError):
    """Raised when a mesh file cannot be parsed; carries the offending line."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(RatePlastError):
    pass


class ConfigurationError(RatePlastError):
    pass


class NumericalError(RatePlastError):
    pass


class SolverError(NumericalError):
    """Linear solver failure (singular or ill-posed system)."""


class NonConvergenceError(NumericalError):
    """Nonlinear iteration failed.

    ``residual_norm`` is the last residual norm reached and ``epsilon`` the
    last regularisation value at which a solve succeeded (if any).
    """

    def __init__(self, message, residual_norm=None, epsilon=None, step=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.epsilon = epsilon
        self.step = step

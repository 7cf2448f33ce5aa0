class ConfigurationError(ValueError):
    """Raised for malformed models, topologies or experiment configs."""


class DivergenceError(RuntimeError):
    """Raised when an iteration fails to settle within its budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InvariantViolation(AssertionError):
    """Internal bookkeeping disagreed with itself (a bug trap, not user error)."""

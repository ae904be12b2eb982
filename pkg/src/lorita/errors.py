"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConvergenceError(RuntimeError):
    """Iterative routine failed to converge within its sweep budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigError(ValueError):
    """Invalid run configuration or command-line arguments."""

"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class CricError(Exception):
    exit_code = 1


class ConfigError(CricError, ValueError):
    """Invalid configuration or arguments."""

    exit_code = 2


class DataError(CricError, ValueError):
    """Malformed, missing or structurally unusable data."""

    exit_code = 3


class NumericError(CricError, ArithmeticError):
    """Numerical failure: divergence, non-convergence, degenerate quantities."""

    exit_code = 4


class FitError(NumericError):
    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class TrainingError(NumericError):
    def __init__(self, message, last_finite_loss=None):
        super().__init__(message)
        self.last_finite_loss = last_finite_loss


class DegenerateBaselineError(NumericError):
    """The baseline's cross-environment gaps vanish, so CRIC is undefined."""

"""Exception types, each mapped to a CLI exit code."""
from typing import Optional


class PlanckianError(Exception):
    exit_code = 1


class ConfigError(PlanckianError, ValueError):
    """Invalid configuration. ``key`` names the offending config entry when known."""

    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class NumericalError(PlanckianError, ArithmeticError):
    exit_code = 3


class EstimationError(PlanckianError, ValueError):
    exit_code = 4

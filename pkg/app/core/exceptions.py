# app/core/exceptions.py
# Domain exceptions shared by the services, jobs and CLI.
#
# CLI exit mapping (app/main.py):
#   ConfigError / option validation  -> 2
#   any other SslbError              -> 3

from typing import Optional


class SslbError(Exception):
    """Base class for every error the engine raises on purpose."""
    pass


class DimensionError(SslbError, ValueError):
    """Raised when tensor or image shapes do not conform."""
    pass


class ConfigError(SslbError, ValueError):
    """Raised for configuration values that make an operation undefined."""
    pass


class ContractViolation(SslbError):
    """Raised when a caller breaks an operation's precondition."""
    pass


class NumericError(SslbError, ArithmeticError):
    """Raised when NaN/Inf shows up in a loss or gradient."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class DatasetError(SslbError):
    pass


class ScenarioError(SslbError):
    pass


class InsufficientDataError(SslbError):
    pass


class SummaryError(SslbError):
    pass


class GridResumeError(SslbError):
    pass

"""Exception hierarchy shared by the numerical services and the CLI.

Every error carries the process exit code the command-line surface reports.
"""
from typing import List, Optional


class SnlsError(RuntimeError):
    """Base class for all errors raised by the laboratory."""

    exit_code = 2


class UsageError(SnlsError):
    """Raised when an operation receives incompatible inputs (tags, grids, exponents)."""


class ConfigurationError(SnlsError):
    """Raised for invalid configuration values or keys."""


class DyadicRangeError(SnlsError):
    """Raised when a dyadic level lies outside the grid's frequency range."""


class UnderResolvedError(SnlsError):
    """Raised when the mollification scale is not resolved by the grid (eps < 4h)."""

    def __init__(self, message: str, resolvable: Optional[List[float]] = None):
        super().__init__(message)
        self.resolvable = list(resolvable or [])


class StatisticsRefusedError(SnlsError):
    """Raised when a Monte Carlo campaign is requested with too few realizations."""


class IntegratorAbort(SnlsError):
    """Raised when time stepping produces non-finite values or violates stability.

    The last finite state and its time are kept so callers can inspect or persist them.
    """

    exit_code = 3

    def __init__(self, message: str, last_good=None, time: float = 0.0):
        super().__init__(message)
        self.last_good = last_good
        self.time = time


class CriterionFailure(SnlsError):
    """Raised by the CLI when a campaign completed but its pass criterion failed."""

    exit_code = 1

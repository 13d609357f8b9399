"""
Exception hierarchy for spde-lab

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class SpdeLabError(Exception):
    """Base class for all spde-lab errors"""

    exit_code = 3

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigurationError(SpdeLabError):
    """Malformed or out-of-range configuration document"""

    exit_code = 2


class InvalidArgumentError(SpdeLabError):
    """An operation was called outside its precondition"""


class DegenerateNoiseError(SpdeLabError):
    """The noise covariance is numerically singular on the Galerkin space"""


class ResourceLimitError(SpdeLabError):
    """A requested computation exceeds its configured budget"""


class ConstructionFailedError(SpdeLabError):
    """The control path could not be constructed"""


class InvariantViolationError(SpdeLabError):
    """A structural invariant (divergence-free, reality) was broken"""


class BlowUpError(SpdeLabError):
    """The D(A) norm of a trajectory crossed the configured guard"""

    def __init__(self, message: str, step: int, time: float, value: Optional[float] = None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.value = value

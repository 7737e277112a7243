"""Exception hierarchy shared by every module of the lab."""

from __future__ import annotations


class SDSMError(Exception):
    """Base class for errors raised by sdsmlab."""


class DomainError(SDSMError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """Evaluation at a point where the kernel is infinite."""


class QuadratureError(SDSMError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance.

    The best available estimate is attached so callers can decide whether
    it is still usable.
    """

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(f"{message} (estimate={estimate!r}, abserr={error!r})")
        self.estimate = estimate
        self.error = error


class ModelRejected(SDSMError):
    """The kernel model fails uniform ellipticity on a tested configuration."""


class ConfigError(SDSMError, ValueError):
    """Malformed or inconsistent experiment configuration.

    ``pointer`` is a JSON pointer to the offending key when one is known.
    """

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer


class FactorizationError(SDSMError, ArithmeticError):
    """The common-noise covariance could not be factorized, even after jitter."""

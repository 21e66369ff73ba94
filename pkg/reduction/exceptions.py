"""
Exceptions raised by the reduction toolkit.
"""


class ReductionError(Exception):
    """Base class for all toolkit errors."""


class InputValidationError(ReductionError, ValueError):
    """An input violates the invariants of its type (norm, hermiticity, trace...)."""


class DegenerateProjectionError(InputValidationError):
    """The requested projection annihilates the state, so the Lüders state is undefined."""


class ConfigurationError(ReductionError):
    """A run or simulation configuration is inconsistent or incomplete."""


class NumericError(ReductionError, ArithmeticError):
    """A numerical procedure failed or produced unusable output."""


class EigensolverError(NumericError):
    """The Hermitian eigensolver did not converge."""


class NumericBlowupError(NumericError):
    """Non-finite amplitudes appeared during integration."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class IntegrationQualityError(NumericError):
    """A fixed-step integrator produced output outside the stated tolerances."""

"""Exception hierarchy shared by every module.

The CLI maps :class:`UsageError` subclasses to exit code 1 and every other
:class:`PsfInvError` to exit code 2.
"""


class PsfInvError(Exception):
    """Base class for all package errors."""


class UsageError(PsfInvError):
    """Bad arguments or configuration supplied by the caller."""


class InvalidDimensionError(UsageError, ValueError):
    pass


class InvalidParameterError(UsageError, ValueError):
    pass


class InvalidInputError(UsageError, ValueError):
    pass


class ConfigurationError(UsageError):
    pass


class SizeLimitError(UsageError):
    """A dense construction would exceed the memory guardrail."""


class NumericFailureError(PsfInvError, ArithmeticError):
    """Non-finite values or a singular operation during a computation.

    ``partial`` carries whatever was computed before the failure (for
    instance the loss curve of an aborted training run).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class StepSizeError(NumericFailureError):
    pass


class AliasingError(PsfInvError):
    """The quadratic Fresnel phase is undersampled on the aperture grid."""

    def __init__(self, message, coeffs=None):
        super().__init__(message)
        self.coeffs = coeffs


class UndefinedCorrelationError(PsfInvError, ValueError):
    pass

"""Exception types shared across the package.

Every error accepts keyword context (the arguments needed to reproduce it);
the context is kept on ``.context`` and appended to the message.
"""


class IrsHcnError(Exception):
    """Base class for all package errors."""

    def __init__(self, message="", **context):
        self.context = context
        if context:
            detail = ", ".join(f"{k}={v!r}" for k, v in context.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class ConfigError(IrsHcnError, ValueError):
    """Configuration file could not be parsed or does not validate."""


class PreconditionError(IrsHcnError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NumericFailure(IrsHcnError, ArithmeticError):
    """A numeric kernel failed to reach its tolerance."""


class OrderOverflowError(NumericFailure):
    """Requested derivative order exceeds the memoized Bell tables."""


class EmptyNetworkError(IrsHcnError):
    """A sampled network realization holds no base station to associate with."""

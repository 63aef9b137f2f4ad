"""Exception taxonomy shared across the package."""

from __future__ import annotations


class IntentLoopError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(IntentLoopError):
    """Malformed input: bad arguments, bad files, violated preconditions."""


class UnknownReferenceError(IntentLoopError):
    """A topic, intent, or slot id that does not exist in the ontology."""


class StateError(IntentLoopError):
    """An operation applied to an object in the wrong lifecycle state."""


class TransportError(IntentLoopError):
    """A remote provider failed after the configured number of attempts."""

    def __init__(self, message: str, attempts: int = 1, cause: Exception | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.cause = cause


class UnknownIntentError(IntentLoopError):
    """The parsed request names a topic or intent outside the ontology.

    Carries the raw model completion so callers can surface a diagnostic.
    """

    def __init__(self, message: str, raw_completion: str | None = None):
        super().__init__(message)
        self.raw_completion = raw_completion


class UndefinedEstimateError(IntentLoopError):
    """An off-policy estimate whose denominator is empty or zero."""

"""Exception hierarchy shared across the toolkit.

Every error raised on purpose by this package derives from CurationError so
callers can catch one type at the CLI boundary.
"""

from __future__ import annotations


class CurationError(Exception):
    """Base class for all toolkit errors."""


class InputError(CurationError):
    """Caller-supplied data is invalid or inconsistent."""


class RequestError(CurationError):
    """A backend request failed after exhausting retries."""

    def __init__(self, message: str, *, record_id: str | None = None,
                 attempts: int | None = None) -> None:
        super().__init__(message)
        self.record_id = record_id
        self.attempts = attempts


class ConsistencyError(CurationError):
    """A backend response contradicts an invariant established earlier in the run."""


class JudgeParseError(CurationError):
    """A judge response matched neither the accepting nor the rejecting token."""

    def __init__(self, message: str, *, raw: str) -> None:
        super().__init__(message)
        self.raw = raw


class TraceParseError(CurationError):
    """A completion could not be parsed into the expected JSON object."""

    def __init__(self, message: str, *, raw: str) -> None:
        super().__init__(message)
        self.raw = raw

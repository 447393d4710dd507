"""Exception types shared by every module."""

from __future__ import annotations


class RailsError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(RailsError):
    """A runtime argument violates a precondition (bad vector, bad dimension)."""


class InvalidConfigError(RailsError):
    """One or more configuration violations, aggregated into a single error."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class FormatError(RailsError):
    """A file does not conform to its declared on-disk layout.

    ``offset`` is the byte offset of the first inconsistency when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        self.offset = offset
        super().__init__(message)


class InternalInvariantError(RailsError):
    """A bug signal: an internal invariant was violated, not a user error."""

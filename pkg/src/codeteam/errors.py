"""Exception hierarchy shared by every module."""

from __future__ import annotations


class CodeTeamError(Exception):
    """Base class for all engine errors."""


class DomainError(CodeTeamError):
    """An argument is outside the operation's domain (negative dt, bad rate...)."""


class EncodingError(CodeTeamError):
    """Event cannot be canonically encoded (non-finite number, bad field)."""


class DecodeError(CodeTeamError):
    """Bytes are not a valid canonical event encoding."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset


class ParseError(CodeTeamError):
    """Structured document failed to parse; `path` locates the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ConfigError(CodeTeamError):
    """Session configuration is unusable (e.g. scenario fails validation)."""


class ActionInvalid(CodeTeamError):
    """Action cannot be executed in the current patient state; `reason` is a short code."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class ClientUnknown(CodeTeamError):
    """Client id is not a trainee or spectator of this session."""


class SessionOver(CodeTeamError):
    """Operation requires a session that has not ended."""


class IntegrityError(CodeTeamError):
    """Event log violates its structural invariants (seq gap, time regression, corruption)."""


class RangeError(CodeTeamError):
    """A timestamp or value is outside the log's valid range."""


class ValidationError(CodeTeamError):
    """Ingested record violates a field invariant (empty text, bad channel value...)."""


class IncompleteLog(CodeTeamError):
    """Log lacks a SessionEnd and cannot be analyzed as a finished session."""


class ProtocolError(CodeTeamError):
    """Wire message violates the connection protocol (e.g. message before hello)."""

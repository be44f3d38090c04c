"""Exception types raised by the covert link package."""


class CovertLinkError(Exception):
    """Base class for all covert link errors."""


class LengthError(CovertLinkError, ValueError):
    """A bit or byte sequence has a length the operation cannot handle."""


class ValidationError(CovertLinkError, ValueError):
    """A field, parameter or payload is outside its allowed range."""


class LogParseError(CovertLinkError):
    """An event log line could not be parsed."""

    def __init__(self, line_number: int, line: str, reason: str):
        self.line_number = line_number
        self.line = line
        super().__init__(f"line {line_number}: {reason}: {line!r}")


class ConfigError(CovertLinkError):
    """A scenario configuration is invalid or references missing files."""


class EndOfTrace(CovertLinkError):
    """A traffic trace has no more entries."""

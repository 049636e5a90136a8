"""Exception types shared across the package."""


class KdrError(Exception):
    """Base class for all package errors."""


class InvalidInputError(KdrError, ValueError):
    """An argument violates a documented precondition."""


class ParseError(KdrError, ValueError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class IntegrityError(KdrError, ValueError):
    """Loaded data violates a structural invariant (e.g. duplicate ids)."""


class FormatError(KdrError, ValueError):
    """A binary file has a bad magic, version, or is truncated."""


class ConfigurationError(KdrError, ValueError):
    """A run configuration is unusable (e.g. empty validation set)."""


class UnknownIdError(KdrError, KeyError):
    """A question or passage id has no entry in a lookup table."""

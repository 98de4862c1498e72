"""Exception types shared across the package."""


class NSingerError(Exception):
    """Base class for all errors raised by nsinger."""
    code = "ERROR"


class ParseError(NSingerError):
    code = "PARSE_ERROR"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(NSingerError, ValueError):
    code = "VALIDATION_ERROR"


class OutOfRangeError(NSingerError, ValueError):
    code = "OUT_OF_RANGE"


class InvalidIndexError(NSingerError, ValueError):
    code = "INVALID_INDEX"


class InvalidDurationError(NSingerError, ValueError):
    code = "INVALID_DURATION"

    def __init__(self, message, event_index=None):
        self.event_index = event_index
        if event_index is not None:
            message = f"event {event_index}: {message}"
        super().__init__(message)


class ShapeMismatchError(NSingerError, ValueError):
    code = "SHAPE_MISMATCH"


class DomainError(NSingerError, ValueError):
    code = "DOMAIN_ERROR"


class NonFiniteError(NSingerError, FloatingPointError):
    code = "NONFINITE_LOSS"

    def __init__(self, message, term=None):
        self.term = term
        super().__init__(message)


class ConfigError(NSingerError, ValueError):
    code = "CONFIG_ERROR"


class CheckpointError(NSingerError):
    code = "CHECKPOINT_ERROR"


class VersionMismatchError(CheckpointError):
    code = "VERSION_MISMATCH"


class CorruptFileError(CheckpointError):
    code = "CORRUPT_FILE"


class NoFramesError(NSingerError, ValueError):
    """No frames satisfy the selection a metric needs."""
    code = "NO_FRAMES"


class DegenerateError(NSingerError, ValueError):
    """Input is constant where a correlation needs variance."""
    code = "DEGENERATE"

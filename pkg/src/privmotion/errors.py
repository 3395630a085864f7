"""Exception types shared across the package."""


class PrivMotionError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(PrivMotionError, ValueError):
    pass


class ContractError(PrivMotionError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(PrivMotionError, ValueError):
    pass


class FormatError(PrivMotionError):
    """Malformed checkpoint container; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(PrivMotionError):
    """Checkpoint is readable but does not match the expected parameter schema."""


class ParseError(PrivMotionError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line

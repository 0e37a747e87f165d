"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigError(ValueError):
    """A configuration is missing, malformed or cannot be satisfied."""


class FormatError(ValueError):
    """A binary file does not follow the expected layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ControllerFault(RuntimeError):
    """The sliding-mode controller produced a non-finite command."""

    def __init__(self, message: str, round_index: int | None = None):
        if round_index is not None:
            message = f"round {round_index}: {message}"
        super().__init__(message)
        self.round_index = round_index

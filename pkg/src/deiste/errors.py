"""Exception types raised across the package."""


class DeisteError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DeisteError, ValueError):
    pass


class DegenerateInputError(DeisteError, ValueError):
    """Input that leaves an operation undefined, e.g. an all-masked row."""


class EmptySequenceError(DegenerateInputError):
    pass


class ContractError(DeisteError, ValueError):
    """A caller violated a precondition (bad index, non-scalar loss, ...)."""


class FormatError(DeisteError, ValueError):
    """Malformed file content. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path

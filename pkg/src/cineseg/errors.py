"""Exception types raised across the package."""


class CinesegError(Exception):
    """Base class for all package errors."""


class ShapeError(CinesegError, ValueError):
    pass


class ContractError(CinesegError, ValueError):
    """A caller violated an operation's precondition."""


class StateError(CinesegError, RuntimeError):
    pass


class DegenerateStatisticsError(CinesegError, ValueError):
    """Too few elements to compute normalization statistics."""


class ConfigError(CinesegError, ValueError):
    def __init__(self, message, field=None, line=None):
        self.message = message
        self.field = field
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)


class ParseError(CinesegError, ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class IntegrityError(CinesegError, ValueError):
    """Checkpoint is truncated, corrupted or from an unknown version."""


class UndefinedMetricError(CinesegError, ValueError):
    pass


class DivergenceError(CinesegError, ArithmeticError):
    """Raised when training produces a non-finite loss or gradient.

    ``net`` holds the network restored to its last good state, ``log`` the
    epochs completed before the failure.
    """

    def __init__(self, message, net=None, log=None):
        super().__init__(message)
        self.net = net
        self.log = log

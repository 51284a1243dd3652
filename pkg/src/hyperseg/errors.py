"""Exception types raised across the package."""


class HypersegError(Exception):
    """Base class for all package errors."""


class DimensionError(HypersegError, ValueError):
    pass


class ShapeError(HypersegError, ValueError):
    pass


class NonFiniteError(HypersegError, ValueError):
    pass


class ZeroNormalError(HypersegError, ValueError):
    pass


class EmptyDatasetError(HypersegError, ValueError):
    pass


class VolumeTooSmallError(HypersegError, ValueError):
    pass


class ChildInfeasibleError(HypersegError, ValueError):
    pass


class NegativeInfeasibleError(HypersegError, ValueError):
    pass


class NonConvergenceError(HypersegError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InvalidKError(HypersegError, ValueError):
    pass


class EmptySetError(HypersegError, ValueError):
    pass


class CheckpointMismatchError(HypersegError, ValueError):
    pass


class ConfigError(HypersegError, ValueError):
    pass


class FormatError(HypersegError, ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset

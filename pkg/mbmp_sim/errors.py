# mbmp_sim/errors.py


class MbmpError(Exception):
    """Base class for every error raised by the simulator."""


class InvalidArgumentError(MbmpError, ValueError):
    """An operation was called outside its precondition."""


class ConfigError(MbmpError):
    """A scenario or sweep file failed validation."""

    def __init__(self, message, keys=None):
        self.keys = list(keys or [])
        if self.keys:
            message = f"{message}: {', '.join(self.keys)}"
        super().__init__(message)


class UndefinedRatioError(MbmpError, ZeroDivisionError):
    """The overhead ratio has no value (zero total density)."""

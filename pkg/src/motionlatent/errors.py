"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``ConfigError`` -> 2, ``DataError`` -> 3,
``NumericalError`` -> 4.
"""


class MotionLatentError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MotionLatentError, ValueError):
    pass


class InvalidArgumentError(ConfigError):
    pass


class DataError(MotionLatentError, ValueError):
    pass


class DimensionError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class MissingStatsError(DataError, KeyError):
    pass


class FormatError(DataError):
    """Malformed file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BackboneMismatchError(DataError):
    pass


class NumericalError(MotionLatentError, ArithmeticError):
    pass


class NumericalDivergenceError(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class UsageError(MotionLatentError, RuntimeError):
    pass

"""Exception types shared across the toolkit."""


class EmshapError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(EmshapError, ValueError):
    def __init__(self, what: str, expected, actual):
        super().__init__(f"{what}: expected {expected}, got {actual}")
        self.what = what
        self.expected = expected
        self.actual = actual


class NumericOverflowError(EmshapError, ArithmeticError):
    """A computation produced a non-finite value."""


class UsageError(EmshapError, RuntimeError):
    """An operation was called in an invalid state or with invalid options."""


class CapacityError(EmshapError, ValueError):
    """Problem size exceeds what the requested algorithm can handle."""


class ConfigError(EmshapError, ValueError):
    """Invalid configuration values."""


class TrainingDivergedError(EmshapError, RuntimeError):
    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report

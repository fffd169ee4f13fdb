class PopAlignError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PopAlignError, ValueError):
    pass


class NumericError(PopAlignError, ArithmeticError):
    pass


class EmptyClassError(PopAlignError, ValueError):
    """A per-class quantity was requested for a class with no samples."""

    def __init__(self, label: int, message: str | None = None):
        self.label = label
        super().__init__(message or f"no samples of class {label}")


class ParseError(PopAlignError, ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class UsageError(PopAlignError, ValueError):
    pass


class UndefinedMetricError(PopAlignError, ValueError):
    pass


class ConstructionError(PopAlignError, ValueError):
    pass

"""Exception types shared across the package."""


class AdvaeError(Exception):
    """Base class for all package errors."""


class ShapeError(AdvaeError, ValueError):
    """Incompatible tensor shapes or dimensions."""

    def __init__(self, message, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)


class DomainError(AdvaeError, ValueError):
    """An input lies outside the mathematical domain of an operation."""

    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} (at index {index})"
        super().__init__(message)


class NumericError(AdvaeError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, **context):
        self.context = context
        if context:
            extra = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({extra})"
        super().__init__(message)


class ConfigError(AdvaeError, ValueError):
    """Invalid configuration value; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")

"""Exception types shared across the package."""


class IntMambaError(Exception):
    """Base class for all package errors."""


class InvalidInputError(IntMambaError, ValueError):
    """Input data is malformed (non-finite values, wrong shape, ...)."""


class ConfigError(IntMambaError, ValueError):
    """A configuration value violates an operation's preconditions."""


class StateOverflowError(IntMambaError, ArithmeticError):
    """An integer value left its declared bit-width where saturation is not allowed."""


class FitError(IntMambaError, RuntimeError):
    """Piecewise-linear fitting could not reach the requested error bound."""

    def __init__(self, message: str, achieved_error: float | None = None):
        super().__init__(message)
        self.achieved_error = achieved_error


class ParseError(IntMambaError, ValueError):
    """A container, preset or metrics file could not be parsed."""

    def __init__(self, message: str, tensor: str | None = None):
        super().__init__(message)
        self.tensor = tensor


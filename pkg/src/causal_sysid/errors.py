"""Exception hierarchy shared by every module.

The CLI maps ``ConfigError`` to exit code 2 and ``NumericError`` to exit code 3.
"""


class SysIdError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SysIdError, ValueError):
    """Invalid configuration value, unknown environment, or bad file."""

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class ShapeError(SysIdError, ValueError):
    pass


class ContractError(SysIdError, ValueError):
    """A precondition of an operation was violated by the caller."""


class DomainError(SysIdError, ValueError):
    """Environment parameters or actions outside their registered bounds."""


class NumericError(SysIdError, ArithmeticError):
    """NaN/inf encountered during a forward pass, backward pass or update."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)

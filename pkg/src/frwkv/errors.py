"""Exception hierarchy shared by every module."""


class FrwkvError(Exception):
    pass


class ShapeError(FrwkvError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(FrwkvError, ValueError):
    """A caller violated an operation precondition."""


class ProtocolError(FrwkvError, ValueError):
    """Input data does not satisfy the forecasting protocol (lengths, splits)."""


class DegenerateScaleError(FrwkvError, ArithmeticError):
    pass


class DivergenceError(FrwkvError, FloatingPointError):
    """Non-finite values appeared during a numeric recurrence or training."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(FrwkvError, ValueError):
    pass


class IncompleteGridError(FrwkvError, RuntimeError):
    """Analysis requested before every planned grid cell has a record."""

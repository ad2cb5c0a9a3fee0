"""Exception types raised across the package."""


class FMPlugError(Exception):
    """Base class for all package errors."""


class DimensionError(FMPlugError, ValueError):
    """Operand shapes do not conform for an operation."""


class ContractError(FMPlugError, ValueError):
    """A precondition of an operation was violated."""


class EvaluationError(FMPlugError, ArithmeticError):
    """A function produced non-finite values where finite ones were required."""


class DivergenceError(FMPlugError, ArithmeticError):
    """An iterative procedure produced non-finite state.

    ``step`` is the index of the offending step or iterate.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SingularityError(FMPlugError, ValueError):
    """Evaluation at a singular point of a field or linear system."""


class CalibrationError(FMPlugError, ValueError):
    pass


class ConfigError(FMPlugError, ValueError):
    pass


class OracleError(FMPlugError, RuntimeError):
    pass

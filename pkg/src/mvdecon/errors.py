"""Exception hierarchy shared by all modules."""


class MvdError(Exception):
    """Base class for package errors."""


class ConfigError(MvdError, ValueError):
    """Invalid configuration or parameters."""


class AssumptionError(ConfigError):
    """Model parameters violate the structural assumptions (e.g. lambda <= 0)."""


class UnsupportedDerivativeError(MvdError, ValueError):
    """Requested derivative order exceeds the supplied smoothness."""


class NumericalError(MvdError, ArithmeticError):
    """Base class for numeric failures (CLI exit code 3)."""


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InstabilityError(NumericalError):
    """Time stepping diverged or lost positivity."""


class ExtrapolationError(NumericalError):
    """Evaluation point lies too far outside the grid."""


class RangeGuardError(NumericalError, OverflowError):
    """exp() argument would overflow (|a * x| > 700)."""


class GridMismatchError(MvdError, ValueError):
    pass


class SchemaError(MvdError, ValueError):
    """Persisted result has an unexpected schema version."""

"""Exception hierarchy shared by all solver modules."""


class PlapsysError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(PlapsysError, ValueError):
    pass


class DegenerateInputError(PlapsysError, ValueError):
    pass


class NumericOverflowError(PlapsysError, ArithmeticError):
    pass


class NumericalDegeneracyError(PlapsysError):
    pass


class PreconditionError(PlapsysError):
    """An input violates a documented precondition (e.g. sub/supersolution test)."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}


class DegenerateGeometryError(PlapsysError):
    pass


class ConvergenceError(PlapsysError):
    """Iteration budget exhausted; ``partial`` holds the last iterate and ``report``."""

    def __init__(self, message, partial=None, report=None):
        super().__init__(message)
        self.partial = partial
        self.report = report

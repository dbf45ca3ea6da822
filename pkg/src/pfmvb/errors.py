"""Exception and warning classes shared across the package."""


class PfmvbError(Exception):
    """Base class for all package errors."""


class DataError(PfmvbError):
    """Malformed or invalid input data."""


class MissingColumn(DataError):
    pass


class NonBinaryResponse(DataError):
    pass


class ConstantPredictor(DataError):
    def __init__(self, column):
        super().__init__(f"predictor column {column!r} is constant and cannot be standardized")
        self.column = column


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionMismatch(PfmvbError, ValueError):
    pass


class NumericalError(PfmvbError):
    """Failure of a numerical routine."""


class SingularSystem(NumericalError):
    pass


class NonConvergence(NumericalError):
    pass


class ScalePolicyExceeded(PfmvbError):
    pass


class SchemaError(PfmvbError):
    pass


class MaxIterExceeded(UserWarning):
    """Issued when a fitter stops at ``max_iter`` without meeting its tolerance."""

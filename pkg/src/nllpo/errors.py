"""Exception types shared across the package."""


class NllpoError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(NllpoError, ValueError):
    pass


class DimensionMismatch(NllpoError, ValueError):
    pass


class NotSquare(NllpoError, ValueError):
    pass


class UnsupportedPrimitive(NllpoError, TypeError):
    """Raised when a differentiated function uses an operation the tape cannot record."""


class NonFiniteLoss(NllpoError, FloatingPointError):
    pass


class EmptyBatch(NllpoError, ValueError):
    pass


class TooFewSamples(NllpoError, ValueError):
    pass


class BreakdownNonFinite(NllpoError, FloatingPointError):
    """Conjugate gradient produced a non-finite iterate (operator likely indefinite)."""


class StationarityViolated(UserWarning):
    """Inner solution is not close enough to stationary for the implicit function premise."""


class ConfigError(NllpoError, ValueError):
    pass


class DataError(NllpoError, ValueError):
    pass


class MissingColumn(DataError):
    pass


class NonNumericCell(DataError):
    def __init__(self, row: int, col: str, value: str):
        super().__init__(f"non-numeric cell at row {row}, column {col!r}: {value!r}")
        self.row = row
        self.col = col
        self.value = value


class EmptyFile(DataError):
    pass

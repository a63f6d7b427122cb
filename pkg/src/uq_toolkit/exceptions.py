from __future__ import annotations


class UncertaintyError(Exception):
    """Base class for every error raised by uq_toolkit."""


class NotPositiveDefinite(UncertaintyError, ValueError):
    """A symmetric factorization met a non-positive pivot."""


class CollinearDesign(NotPositiveDefinite):
    """The intercept-augmented design matrix has (near) collinear columns."""


class NonFiniteValue(UncertaintyError, ValueError):
    pass


class InvalidProbability(UncertaintyError, ValueError):
    pass


class InvalidDf(UncertaintyError, ValueError):
    pass


class InvalidAlpha(UncertaintyError, ValueError):
    pass


class InvalidProbVector(UncertaintyError, ValueError):
    pass


class TooFewObservations(UncertaintyError, ValueError):
    pass


class DimensionMismatch(UncertaintyError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class LengthMismatch(DimensionMismatch):
    pass


class EmptyDataset(UncertaintyError, ValueError):
    pass


class EmptyEnsemble(UncertaintyError, ValueError):
    pass


class EmptyInput(UncertaintyError, ValueError):
    pass


class InvalidConfig(UncertaintyError, ValueError):
    pass


class InvalidT(InvalidConfig):
    pass


class InvalidDomain(InvalidConfig):
    pass


class IndexOutOfRange(UncertaintyError, IndexError):
    pass


class InsufficientCalibration(UncertaintyError, ValueError):
    """ceil((n + 1)(1 - alpha)) exceeds the calibration size n."""


class InfeasibleSplit(UncertaintyError, ValueError):
    pass


class DivergedTraining(UncertaintyError, ArithmeticError):
    """Training loss became non-finite; usually the learning rate is too high."""


class ParseError(UncertaintyError, ValueError):
    """
    A CSV file could not be read into a Dataset.

    Attributes:
        row: 1-based data row (header excluded) where parsing failed, if known
        column: column name where parsing failed, if known
    """

    def __init__(self, message: str, row: int | None = None, column: str | None = None) -> None:
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column!r}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NonNumericCell(ParseError):
    pass


class MissingColumn(UncertaintyError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""

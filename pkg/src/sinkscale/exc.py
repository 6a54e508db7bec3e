"""
Exceptions & Error Handling
============================
Exceptions and error handling for sinkscale.
These are classes designed to capture the various ways an instance, a
distribution, a witness or an input file can fail validation.
"""

from __future__ import annotations


class InvalidInstance(ValueError):
    """
    The matrix and targets do not form a scaling instance.
    """


class InvalidMatrix(InvalidInstance):
    """
    The matrix violates the sparse non-negative representation (bad
    indices, duplicate entries or non-positive stored values).
    """


class DimensionMismatch(InvalidInstance):
    pass


class ZeroRowOrColumn(InvalidInstance):
    """
    The matrix has a row or column without stored entries; such a matrix
    is never scalable to positive targets.
    """

    def __init__(self, axis: str, index: int) -> None:
        super().__init__(f"{axis} {index} has no nonzero entries")
        self.axis = axis
        # 1-based, as in Matrix Market files
        self.index = index


class TargetSumMismatch(InvalidInstance):
    def __init__(self, row_total: float, col_total: float) -> None:
        super().__init__(
            f"row targets sum to {row_total!r} but column targets sum to "
            f"{col_total!r}"
        )
        self.row_total = row_total
        self.col_total = col_total


class NonpositiveTarget(InvalidInstance):
    pass


class InvalidParameter(ValueError):
    pass


class NonpositiveDelta(InvalidParameter):
    pass


class BudgetOverflow(InvalidParameter):
    """
    The threshold is so small that the iteration budget derived from it is
    not a finite number.
    """


class NonpositiveTheta(InvalidParameter):
    pass


class DivergenceError(ValueError):
    pass


class LengthMismatch(DivergenceError):
    pass


class InvalidDistribution(DivergenceError):
    """
    A vector is not a probability distribution (negative entry or a sum
    further than 1e-12 from one).
    """


class WitnessError(ValueError):
    pass


class WitnessInfeasible(WitnessError):
    """
    The witness does not have the target row and column sums.
    """


class WitnessSupportViolation(WitnessError):
    """
    The witness has an entry outside the support of the scaled matrix.
    """


class WitnessRequired(WitnessError):
    """
    A potential certificate was requested for a trace recorded without a
    witness.
    """


class MatchingError(ValueError):
    pass


class NotStochastic(MatchingError):
    pass


class NotSquare(MatchingError):
    pass


class IsolatedVertex(MatchingError):
    def __init__(self, side: str, index: int) -> None:
        super().__init__(f"{side} vertex {index} has no edges")
        self.side = side
        self.index = index


class InternalScalingError(RuntimeError):
    """
    Raised when a normalization meets a zero sum. Validated instances never
    trigger it.
    """


class InternalZeroRow(InternalScalingError):
    pass


class InternalZeroColumn(InternalScalingError):
    pass


class ScalerRangeExceeded(ValueError):
    """
    A normalization would push an entry of the iterate, or the accumulated
    scalers, out of the floating point range. Only instances that are not
    scalable (or nearly so) get there.
    """


class DegenerateSupport(RuntimeError):
    """
    The instance generator could not produce a feasible witness.
    """


class InputFormatError(ValueError):
    """
    Container for errors found while parsing an input file.
    """

    def __init__(self, path: str, line: int | None, msg: str) -> None:
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {msg}")
        self.path = path
        self.line = line


class MatrixMarketError(InputFormatError):
    pass


class VectorFileError(InputFormatError):
    pass


class EdgeListError(InputFormatError):
    pass

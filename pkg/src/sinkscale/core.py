"""
Core
==============
Sparse non-negative matrices, target vectors and the instance parameters
(``h``, ``rho``, ``nu``, ``Delta``) that appear in every convergence bound.

Matrices are kept in coordinate form with their entries in the order they
were given. Every row or column accumulation adds the stored values in that
entry-list order, so results are bit-reproducible for a given input file.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse

from sinkscale import exc

LOGGER = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IndexArray = NDArray[np.int64]

TARGET_SUM_RTOL = 1e-9
"""Relative tolerance on ``|sum(r) - sum(c)|``."""


def _readonly(values: ArrayLike, dtype: type) -> NDArray[np.generic]:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


class SparseNonnegMatrix:
    """An ``n_rows x n_cols`` non-negative matrix stored as a list of
    strictly positive entries.

    Zeros are represented by absence. Instances are immutable: the index
    and value arrays are read-only and every transformation returns a new
    matrix.

    Parameters
    ----------
    n_rows, n_cols : int
        Matrix dimensions, both positive.
    rows, cols : array-like of int
        0-based coordinates of the stored entries.
    values : array-like of float
        Stored values, each finite and strictly positive.

    Raises
    ------
    exc.InvalidMatrix
        If an index is out of range, an ``(i, j)`` pair is repeated or a
        value is not strictly positive.
    """

    __slots__ = ("n_rows", "n_cols", "rows", "cols", "values")

    n_rows: int
    n_cols: int
    rows: IndexArray
    cols: IndexArray
    values: FloatArray

    def __init__(
        self,
        n_rows: int,
        n_cols: int,
        rows: ArrayLike,
        cols: ArrayLike,
        values: ArrayLike,
    ) -> None:
        if int(n_rows) < 1 or int(n_cols) < 1:
            raise exc.InvalidMatrix(
                f"dimensions must be positive, got {n_rows}x{n_cols}"
            )
        r = np.asarray(rows, dtype=np.int64).ravel()
        c = np.asarray(cols, dtype=np.int64).ravel()
        v = np.asarray(values, dtype=np.float64).ravel()
        if not (r.size == c.size == v.size):
            raise exc.InvalidMatrix(
                "rows, cols and values must have the same length"
            )
        if r.size:
            if r.min() < 0 or r.max() >= n_rows:
                raise exc.InvalidMatrix("row index out of range")
            if c.min() < 0 or c.max() >= n_cols:
                raise exc.InvalidMatrix("column index out of range")
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise exc.InvalidMatrix(
                    "stored values must be finite and strictly positive"
                )
            keys = r * int(n_cols) + c
            if np.unique(keys).size != keys.size:
                raise exc.InvalidMatrix("duplicate (row, col) entries")
        self._assign(int(n_rows), int(n_cols), r, c, v)

    def _assign(
        self,
        n_rows: int,
        n_cols: int,
        rows: NDArray[np.generic],
        cols: NDArray[np.generic],
        values: NDArray[np.generic],
    ) -> None:
        self.n_rows = n_rows
        self.n_cols = n_cols
        self.rows = _readonly(rows, np.int64)  # type: ignore[assignment]
        self.cols = _readonly(cols, np.int64)  # type: ignore[assignment]
        self.values = _readonly(values, np.float64)  # type: ignore[assignment]

    @classmethod
    def from_entries(
        cls,
        n_rows: int,
        n_cols: int,
        entries: Iterable[tuple[int, int, float]],
    ) -> SparseNonnegMatrix:
        """Build a matrix from ``(row, col, value)`` triples (0-based)."""
        triples = list(entries)
        if not triples:
            return cls(n_rows, n_cols, [], [], [])
        rows, cols, values = zip(*triples)
        return cls(n_rows, n_cols, rows, cols, values)

    @classmethod
    def from_dense(cls, dense: ArrayLike) -> SparseNonnegMatrix:
        """Build a matrix from a dense 2-D array, storing its positive
        entries in row-major order.

        Raises
        ------
        exc.InvalidMatrix
            If the array has negative entries.
        """
        arr = np.asarray(dense, dtype=np.float64)
        if arr.ndim != 2:
            raise exc.InvalidMatrix("expected a 2-D array")
        if np.any(arr < 0):
            raise exc.InvalidMatrix("negative entries are not supported")
        rows, cols = np.nonzero(arr)
        return cls(arr.shape[0], arr.shape[1], rows, cols, arr[rows, cols])

    def with_values(self, values: ArrayLike) -> SparseNonnegMatrix:
        """Return a matrix with the same sparsity pattern and new values.

        The pattern is shared, not re-validated.
        """
        new = object.__new__(SparseNonnegMatrix)
        v = np.asarray(values, dtype=np.float64)
        if v.shape != self.values.shape:
            raise exc.InvalidMatrix("values do not match the pattern")
        new.n_rows = self.n_rows
        new.n_cols = self.n_cols
        new.rows = self.rows
        new.cols = self.cols
        new.values = _readonly(v, np.float64)  # type: ignore[assignment]
        return new

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def keys(self) -> IndexArray:
        """Linear (row-major) position of every stored entry."""
        return self.rows * self.n_cols + self.cols

    def entries(self) -> list[tuple[int, int, float]]:
        return [
            (int(i), int(j), float(v))
            for i, j, v in zip(self.rows, self.cols, self.values)
        ]

    def to_coo(self) -> sparse.coo_array:
        return sparse.coo_array(
            (self.values, (self.rows, self.cols)), shape=self.shape
        )

    def to_dense(self) -> FloatArray:
        dense = np.zeros(self.shape, dtype=np.float64)
        dense[self.rows, self.cols] = self.values
        return dense

    def __repr__(self) -> str:
        return (
            f"SparseNonnegMatrix({self.n_rows}x{self.n_cols}, "
            f"nnz={self.nnz})"
        )


def support_index(
    pattern: SparseNonnegMatrix, other: SparseNonnegMatrix
) -> IndexArray:
    """For each entry of ``other``, the position of the same ``(i, j)`` in
    ``pattern``'s entry list, or ``-1`` when ``pattern`` stores nothing
    there.

    Raises
    ------
    exc.DimensionMismatch
        If the matrices have different shapes.
    """
    if pattern.shape != other.shape:
        raise exc.DimensionMismatch(
            f"shapes differ: {pattern.shape} vs {other.shape}"
        )
    if pattern.nnz == 0:
        return np.full(other.nnz, -1, dtype=np.int64)
    keys = pattern.keys()
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    wanted = other.keys()
    pos = np.clip(np.searchsorted(sorted_keys, wanted), 0, keys.size - 1)
    found = sorted_keys[pos] == wanted
    return np.where(found, order[pos], -1).astype(np.int64)


def row_sums(A: SparseNonnegMatrix) -> FloatArray:
    """Row sums of ``A``; a row without entries sums to 0."""
    return np.bincount(A.rows, weights=A.values, minlength=A.n_rows)


def col_sums(A: SparseNonnegMatrix) -> FloatArray:
    """Column sums of ``A``; a column without entries sums to 0."""
    return np.bincount(A.cols, weights=A.values, minlength=A.n_cols)


class TargetVectors:
    """Row targets ``r`` and column targets ``c``.

    Both are vectors of strictly positive floats. Equality of their sums is
    checked by :func:`validate_instance`, not here.

    Raises
    ------
    exc.NonpositiveTarget
        If an entry is not finite and strictly positive.
    """

    __slots__ = ("r", "c")

    r: FloatArray
    c: FloatArray

    def __init__(self, r: ArrayLike, c: ArrayLike) -> None:
        for name, vec in (("r", r), ("c", c)):
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise exc.NonpositiveTarget(
                    f"target {name} must be a non-empty vector"
                )
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise exc.NonpositiveTarget(
                    f"target {name} has non-positive entries"
                )
            setattr(self, name, _readonly(arr, np.float64))

    @property
    def h(self) -> float:
        """Total mass, taken from the row targets."""
        return float(self.r.sum())

    def __repr__(self) -> str:
        return f"TargetVectors(n={self.r.size}, m={self.c.size})"


def uniform_targets(n_rows: int, n_cols: int) -> TargetVectors:
    """The doubly stochastic targets ``r = c = 1``.

    Raises
    ------
    exc.DimensionMismatch
        If the matrix is not square.
    """
    if n_rows != n_cols:
        raise exc.DimensionMismatch(
            f"uniform targets need a square matrix, got {n_rows}x{n_cols}"
        )
    return TargetVectors(np.ones(n_rows), np.ones(n_cols))


class InstanceParams(BaseModel):
    """The quantities every bound is stated in."""

    model_config = ConfigDict(frozen=True)

    h: float = Field(gt=0)
    """Common l1 norm of the targets."""

    rho: float = Field(gt=0)
    """Largest target entry."""

    nu: float = Field(gt=0, le=1)
    """Smallest stored entry of A divided by its largest."""

    delta_cols: int = Field(ge=1)
    """Largest number of nonzeros in a column of A."""

    def potential_bound(self) -> float:
        """``ln(1 + 2 Delta rho / nu)``, the bound on the initial
        potential and the numerator of the iteration budget."""
        return math.log(1.0 + 2.0 * self.delta_cols * self.rho / self.nu)


class ScalingInstance(NamedTuple):
    """A validated matrix with targets whose sums agree up to rounding."""

    matrix: SparseNonnegMatrix
    targets: TargetVectors
    params: InstanceParams


def validate_instance(
    A: SparseNonnegMatrix, targets: TargetVectors
) -> ScalingInstance:
    """Check that ``A`` and ``targets`` form a scaling instance and derive
    its parameters.

    After validation the column targets are rescaled by
    ``sum(r) / sum(c)``, so in the working copy ``sum(c)`` equals ``h =
    sum(r)`` up to the rounding of that product and of the summation (a few
    units in the last place). Every bound tolerates this.

    Parameters
    ----------
    A : SparseNonnegMatrix
        The matrix to scale.
    targets : TargetVectors
        Row and column targets.

    Returns
    -------
    ScalingInstance

    Raises
    ------
    exc.DimensionMismatch
        If the target lengths do not match the matrix.
    exc.ZeroRowOrColumn
        If a row or column of ``A`` has no entries.
    exc.TargetSumMismatch
        If the target sums differ by more than ``1e-9`` relative.
    """
    if targets.r.size != A.n_rows or targets.c.size != A.n_cols:
        raise exc.DimensionMismatch(
            f"targets have lengths ({targets.r.size}, {targets.c.size}) "
            f"but the matrix is {A.n_rows}x{A.n_cols}"
        )
    row_counts = np.bincount(A.rows, minlength=A.n_rows)
    empty_rows = np.flatnonzero(row_counts == 0)
    if empty_rows.size:
        raise exc.ZeroRowOrColumn("row", int(empty_rows[0]) + 1)
    col_counts = np.bincount(A.cols, minlength=A.n_cols)
    empty_cols = np.flatnonzero(col_counts == 0)
    if empty_cols.size:
        raise exc.ZeroRowOrColumn("column", int(empty_cols[0]) + 1)

    row_total = float(targets.r.sum())
    col_total = float(targets.c.sum())
    if abs(row_total - col_total) > TARGET_SUM_RTOL * row_total:
        raise exc.TargetSumMismatch(row_total, col_total)
    if col_total != row_total:
        targets = TargetVectors(targets.r, targets.c * (row_total / col_total))

    params = InstanceParams(
        h=row_total,
        rho=float(max(targets.r.max(), targets.c.max())),
        nu=float(A.values.min() / A.values.max()),
        delta_cols=int(col_counts.max()),
    )
    LOGGER.debug(
        f"Validated {A.n_rows}x{A.n_cols} instance with nnz={A.nnz}: "
        f"{params}"
    )
    return ScalingInstance(A, targets, params)


def iteration_budget(params: InstanceParams, delta: float) -> int:
    """Number of iterations within which some half-step has a marginal
    KL-divergence of at most ``delta``: ``ceil(ln(1 + 2 Delta rho/nu) /
    delta)``.

    Raises
    ------
    exc.NonpositiveDelta
        If ``delta`` is not strictly positive.
    exc.BudgetOverflow
        If ``delta`` is so small that the budget is not finite.
    """
    if not delta > 0:
        raise exc.NonpositiveDelta(f"delta must be positive, got {delta}")
    iterations = params.potential_bound() / delta
    if not math.isfinite(iterations):
        raise exc.BudgetOverflow(
            f"delta={delta!r} gives an unbounded iteration budget"
        )
    return max(1, math.ceil(iterations))

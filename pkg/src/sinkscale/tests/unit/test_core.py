import math

import numpy as np
import pytest

from sinkscale import exc
from sinkscale.core import (
    InstanceParams,
    SparseNonnegMatrix,
    TargetVectors,
    col_sums,
    iteration_budget,
    row_sums,
    support_index,
    uniform_targets,
    validate_instance,
)


def test_from_dense_keeps_row_major_order():
    A = SparseNonnegMatrix.from_dense([[0.0, 2.0], [3.0, 0.0], [0.0, 4.0]])
    assert A.shape == (3, 2)
    assert A.entries() == [(0, 1, 2.0), (1, 0, 3.0), (2, 1, 4.0)]
    np.testing.assert_array_equal(
        A.to_dense(), [[0.0, 2.0], [3.0, 0.0], [0.0, 4.0]]
    )


def test_from_entries_keeps_given_order():
    entries = [(1, 1, 5.0), (0, 0, 1.0), (1, 0, 0.25)]
    A = SparseNonnegMatrix.from_entries(2, 2, entries)
    assert A.entries() == entries
    assert A.nnz == 3


def test_matrix_is_read_only(rothblum_matrix):
    with pytest.raises(ValueError):
        rothblum_matrix.values[0] = 7.0


@pytest.mark.parametrize(
    "n_rows,n_cols,rows,cols,values",
    (
        (2, 2, [0, 0], [1, 1], [1.0, 2.0]),
        (2, 2, [0], [0], [0.0]),
        (2, 2, [0], [0], [-1.0]),
        (2, 2, [0], [0], [math.inf]),
        (2, 2, [2], [0], [1.0]),
        (2, 2, [0], [-1], [1.0]),
        (0, 2, [], [], []),
        (2, 2, [0, 1], [0], [1.0]),
    ),
)
def test_invalid_matrix(n_rows, n_cols, rows, cols, values):
    with pytest.raises(exc.InvalidMatrix):
        SparseNonnegMatrix(n_rows, n_cols, rows, cols, values)


def test_from_dense_rejects_negative_entries():
    with pytest.raises(exc.InvalidMatrix):
        SparseNonnegMatrix.from_dense([[1.0, -1.0], [1.0, 1.0]])


def test_with_values_shares_pattern(rothblum_matrix):
    doubled = rothblum_matrix.with_values(rothblum_matrix.values * 2)
    assert doubled.rows is rothblum_matrix.rows
    np.testing.assert_array_equal(doubled.to_dense(), [[2, 2], [2, 4]])
    with pytest.raises(exc.InvalidMatrix):
        rothblum_matrix.with_values([1.0])


def test_sums(rothblum_matrix):
    np.testing.assert_array_equal(row_sums(rothblum_matrix), [2.0, 3.0])
    np.testing.assert_array_equal(col_sums(rothblum_matrix), [2.0, 3.0])


def test_sums_of_empty_lines_are_zero():
    A = SparseNonnegMatrix.from_entries(3, 2, [(0, 0, 1.5)])
    np.testing.assert_array_equal(row_sums(A), [1.5, 0.0, 0.0])
    np.testing.assert_array_equal(col_sums(A), [1.5, 0.0])


def test_row_and_column_totals_agree(generated):
    A = generated.matrix
    assert row_sums(A).sum() == pytest.approx(col_sums(A).sum(), rel=1e-14)


def test_support_index():
    pattern = SparseNonnegMatrix.from_entries(
        2, 3, [(1, 2, 1.0), (0, 0, 1.0), (0, 1, 1.0)]
    )
    other = SparseNonnegMatrix.from_entries(
        2, 3, [(0, 1, 5.0), (1, 0, 5.0), (1, 2, 5.0)]
    )
    np.testing.assert_array_equal(support_index(pattern, other), [2, -1, 0])


def test_support_index_shape_mismatch(rothblum_matrix):
    other = SparseNonnegMatrix.from_dense([[1.0, 1.0, 1.0]])
    with pytest.raises(exc.DimensionMismatch):
        support_index(rothblum_matrix, other)


@pytest.mark.parametrize(
    "r,c",
    (
        ([1.0, 0.0], [1.0]),
        ([1.0, -2.0], [1.0]),
        ([1.0], [math.nan]),
        ([], [1.0]),
    ),
)
def test_nonpositive_targets(r, c):
    with pytest.raises(exc.NonpositiveTarget):
        TargetVectors(r, c)


def test_uniform_targets_need_square_matrix():
    with pytest.raises(exc.DimensionMismatch):
        uniform_targets(2, 3)


@pytest.mark.parametrize(
    "dense,r,c,expected",
    (
        ([[1.0, 0.0], [0.0, 1.0]], [1, 1], [1, 1], (2.0, 1.0, 1.0, 1)),
        ([[1.0, 1.0], [1.0, 2.0]], [1, 1], [1, 1], (2.0, 1.0, 0.5, 2)),
        (
            [[1.0, 2.0, 1.0], [1.0, 1.0, 4.0]],
            [3, 3],
            [2, 2, 2],
            (6.0, 3.0, 0.25, 2),
        ),
        ([[5.0]], [3], [3], (3.0, 3.0, 1.0, 1)),
    ),
)
def test_instance_params(dense, r, c, expected):
    instance = validate_instance(
        SparseNonnegMatrix.from_dense(dense), TargetVectors(r, c)
    )
    p = instance.params
    assert (p.h, p.rho, p.nu, p.delta_cols) == expected


@pytest.mark.parametrize(
    "dense,axis,index",
    (
        ([[1.0, 1.0], [0.0, 0.0]], "row", 2),
        ([[0.0, 1.0], [0.0, 1.0]], "column", 1),
        ([[1.0, 0.0, 0.0], [1.0, 0.0, 1.0]], "column", 2),
    ),
)
def test_zero_row_or_column(dense, axis, index):
    A = SparseNonnegMatrix.from_dense(dense)
    targets = TargetVectors(np.ones(A.n_rows), np.full(A.n_cols, 2 / 3))
    if A.n_rows == A.n_cols:
        targets = uniform_targets(A.n_rows, A.n_cols)
    with pytest.raises(exc.ZeroRowOrColumn) as err:
        validate_instance(A, targets)
    assert (err.value.axis, err.value.index) == (axis, index)
    assert f"{axis} {index}" in str(err.value)


def test_target_length_mismatch(rothblum_matrix):
    with pytest.raises(exc.DimensionMismatch):
        validate_instance(rothblum_matrix, TargetVectors([1, 1, 1], [1, 1]))


def test_target_sum_mismatch(rothblum_matrix):
    with pytest.raises(exc.TargetSumMismatch) as err:
        validate_instance(rothblum_matrix, TargetVectors([1, 1], [1, 1.1]))
    assert err.value.row_total == 2.0


def test_target_sums_are_equalized(rothblum_matrix):
    targets = TargetVectors([1.0, 1.0], [1.0, 1.0 + 1e-10])
    instance = validate_instance(rothblum_matrix, targets)
    assert instance.targets.c.sum() == pytest.approx(2.0, rel=1e-15)
    assert instance.params.h == 2.0


def test_rescaled_column_targets_match_h_to_rounding(rng):
    r = rng.uniform(0.5, 2.0, 50)
    c = rng.permutation(r) * (1.0 + 3e-10)
    A = SparseNonnegMatrix.from_dense(np.ones((50, 50)))
    instance = validate_instance(A, TargetVectors(r, c))
    h = instance.params.h
    assert h == float(r.sum())
    assert abs(float(instance.targets.c.sum()) - h) <= 8 * np.spacing(h)


@pytest.mark.parametrize(
    "params,delta,expected",
    (
        (InstanceParams(h=2, rho=1, nu=0.5, delta_cols=2), math.log(9), 1),
        (InstanceParams(h=2, rho=1, nu=1, delta_cols=1), 0.1, 11),
        (InstanceParams(h=2, rho=1, nu=0.5, delta_cols=2), 0.00125, 1758),
        (InstanceParams(h=2, rho=1, nu=1, delta_cols=1), 100.0, 1),
    ),
)
def test_iteration_budget(params, delta, expected):
    assert iteration_budget(params, delta) == expected


def test_iteration_budget_is_monotone():
    params = InstanceParams(h=4, rho=1, nu=0.1, delta_cols=3)
    budgets = [iteration_budget(params, d) for d in (1.0, 0.1, 0.01, 1e-3)]
    assert budgets == sorted(budgets)
    looser = InstanceParams(h=4, rho=1, nu=0.01, delta_cols=3)
    assert iteration_budget(looser, 0.01) >= iteration_budget(params, 0.01)


@pytest.mark.parametrize("delta", (0.0, -1.0, math.nan))
def test_nonpositive_delta(delta):
    params = InstanceParams(h=2, rho=1, nu=1, delta_cols=1)
    with pytest.raises(exc.NonpositiveDelta):
        iteration_budget(params, delta)


@pytest.mark.parametrize("delta", (1e-310, 5e-324))
def test_budget_overflow(delta):
    params = InstanceParams(h=2, rho=1, nu=0.5, delta_cols=2)
    with pytest.raises(exc.BudgetOverflow, match="unbounded"):
        iteration_budget(params, delta)
    assert issubclass(exc.BudgetOverflow, exc.InvalidParameter)


def test_potential_bound():
    params = InstanceParams(h=2, rho=1, nu=0.5, delta_cols=2)
    assert params.potential_bound() == pytest.approx(math.log(9.0))

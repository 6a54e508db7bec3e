"""
Sinkhorn-Knopp
==============
Alternate row and column scaling of a validated instance, with a per
half-step trace of the marginal errors and, when a feasible witness ``Z`` is
known, of the potential ``D(Z, .)``.

The iterates are::

    A(0)   = A with every column j scaled to sum c_j
    B(t)   = A(t) with every row i scaled to sum r_i
    A(t+1) = B(t) with every column j scaled to sum c_j

``A(t)`` has phase ``"A"`` (columns exact, rows measured) and ``B(t)`` has
phase ``"B"`` (rows exact, columns measured).
"""

from __future__ import annotations

import csv
import logging
import math
import os
from collections.abc import Iterator
from typing import Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import rel_entr

from sinkscale import exc
from sinkscale.core import (
    FloatArray,
    IndexArray,
    InstanceParams,
    ScalingInstance,
    SparseNonnegMatrix,
    TargetVectors,
    col_sums,
    iteration_budget,
    row_sums,
    support_index,
)
from sinkscale.divergence import ONE_MINUS_LN2, kl_divergence

LOGGER = logging.getLogger(__name__)

Metric = Literal["l1", "l2", "kl"]
Phase = Literal["A", "B"]
Outcome = Literal["converged", "budget_exhausted"]

SCALER_MIN = 1e-300
SCALER_MAX = 1e300
LOG_SCALER_MIN = math.log(SCALER_MIN)
LOG_SCALER_MAX = math.log(SCALER_MAX)
ENTRY_MIN = float(np.finfo(np.float64).tiny)
"""Smallest iterate entry kept; below it precision degrades."""
WITNESS_RTOL = 1e-6

TRACE_COLUMNS = ("t", "phase", "err1", "err2", "kl_row", "kl_col", "pot_Z")


class ScalingState(NamedTuple):
    """One iterate together with its accumulated diagonal scalers.

    ``current`` always equals ``diag(row_scaler) . A . diag(col_scaler)`` on
    the sparsity pattern of the instance matrix ``A``.
    """

    instance: ScalingInstance
    current: SparseNonnegMatrix
    phase: Phase
    t: int
    row_scaler: FloatArray
    col_scaler: FloatArray


class StoppingRule(BaseModel):
    """Stop at the first half-step whose measured marginal satisfies
    ``metric <= threshold``.

    ``threshold`` is ``epsilon`` for the ``l1`` and ``l2`` metrics and
    ``delta`` for ``kl``. Without ``max_iters`` the budget is
    :func:`sinkscale.core.iteration_budget` at :func:`default_delta`.
    """

    model_config = ConfigDict(frozen=True)

    metric: Metric
    threshold: float = Field(gt=0)
    max_iters: int | None = Field(default=None, ge=1)


def default_delta(rule: StoppingRule, params: InstanceParams) -> float:
    """Marginal KL-divergence that guarantees the rule's threshold.

    * ``l1``: ``eps**2 / (2 h**2)`` (Pinsker).
    * ``l2``: ``C / (2 rho h (1/eps + 1/eps**2))`` with ``C = 1 - ln 2``.
    * ``kl``: the threshold itself.

    Tiny thresholds may underflow to ``0.0``.
    """
    eps = rule.threshold
    if rule.metric == "l1":
        return eps**2 / (2.0 * params.h**2)
    if rule.metric == "l2":
        # 1/eps + 1/eps**2 == (1 + eps) / eps**2
        return (
            ONE_MINUS_LN2
            * eps**2
            / (2.0 * params.rho * params.h * (1.0 + eps))
        )
    return eps


def rule_budget(rule: StoppingRule, params: InstanceParams) -> int:
    """The explicit ``max_iters``, or the budget at :func:`default_delta`.

    Raises
    ------
    exc.BudgetOverflow
        If the threshold is too small for a finite budget.
    """
    if rule.max_iters is not None:
        return rule.max_iters
    delta = default_delta(rule, params)
    if delta == 0.0:
        raise exc.BudgetOverflow(
            f"{rule.metric} threshold {rule.threshold!r} is too small to "
            "derive an iteration budget; set max_iters"
        )
    return iteration_budget(params, delta)


def _in_range(scaler: FloatArray) -> bool:
    return bool(np.all((scaler >= SCALER_MIN) & (scaler <= SCALER_MAX)))


def _rebalance(
    log_row: FloatArray, log_col: FloatArray
) -> tuple[FloatArray, FloatArray]:
    """Scalers ``exp(log_row - s)`` and ``exp(log_col + s)`` for a shift
    ``s`` that puts both inside ``[SCALER_MIN, SCALER_MAX]``.

    Every product ``row_i * col_j`` is unchanged by the shift.

    Raises
    ------
    exc.ScalerRangeExceeded
        If a logarithm is not finite or no shift fits both scalers.
    """
    if not (np.all(np.isfinite(log_row)) and np.all(np.isfinite(log_col))):
        raise exc.ScalerRangeExceeded("a scaling factor is not finite")
    r_lo, r_hi = float(log_row.min()), float(log_row.max())
    c_lo, c_hi = float(log_col.min()), float(log_col.max())
    if r_lo >= LOG_SCALER_MIN and r_hi <= LOG_SCALER_MAX and (
        c_lo >= LOG_SCALER_MIN and c_hi <= LOG_SCALER_MAX
    ):
        return np.exp(log_row), np.exp(log_col)
    lowest = max(r_hi - LOG_SCALER_MAX, LOG_SCALER_MIN - c_lo)
    highest = min(r_lo - LOG_SCALER_MIN, LOG_SCALER_MAX - c_hi)
    if lowest > highest:
        raise exc.ScalerRangeExceeded(
            f"row scalers span e^{r_hi - r_lo:.6g} and column scalers "
            f"e^{c_hi - c_lo:.6g}; no common factor fits both in range"
        )
    centered = 0.25 * ((r_lo + r_hi) - (c_lo + c_hi))
    shift = min(max(centered, lowest), highest)
    LOGGER.warning(
        f"Rebalancing scalers by exp({shift:.6g}); log range was "
        f"[{min(r_lo, c_lo):.6g}, {max(r_hi, c_hi):.6g}]"
    )
    return np.exp(log_row - shift), np.exp(log_col + shift)


def _accumulate(
    row_scaler: FloatArray,
    col_scaler: FloatArray,
    row_factors: FloatArray | None = None,
    col_factors: FloatArray | None = None,
) -> tuple[FloatArray, FloatArray]:
    """Multiply the scalers by one normalization's factors.

    The product is taken directly while it stays in range and through
    :func:`_rebalance` in log space otherwise.
    """
    with np.errstate(over="ignore", under="ignore"):
        row = row_scaler if row_factors is None else row_scaler * row_factors
        col = col_scaler if col_factors is None else col_scaler * col_factors
    if _in_range(row) and _in_range(col):
        return row, col
    log_row = np.log(row_scaler)
    log_col = np.log(col_scaler)
    if row_factors is not None:
        log_row = log_row + np.log(row_factors)
    if col_factors is not None:
        log_col = log_col + np.log(col_factors)
    return _rebalance(log_row, log_col)


def _normalized(
    M: SparseNonnegMatrix, factors: FloatArray, index: IndexArray, at: str
) -> SparseNonnegMatrix:
    """``M`` with entry ``k`` multiplied by ``factors[index[k]]``.

    Raises
    ------
    exc.ScalerRangeExceeded
        If an entry falls below ``ENTRY_MIN`` or overflows.
    """
    with np.errstate(over="ignore", under="ignore"):
        values = M.values * factors[index]
    bad = np.flatnonzero(~((values >= ENTRY_MIN) & (values < np.inf)))
    if bad.size:
        k = int(bad[0])
        raise exc.ScalerRangeExceeded(
            f"entry ({int(M.rows[k]) + 1}, {int(M.cols[k]) + 1}) of {at} "
            f"leaves the floating point range"
        )
    return M.with_values(values)


def initialize(instance: ScalingInstance) -> ScalingState:
    """Scale every column of ``A`` to its target, giving ``A(0)``.

    Zero columns are excluded by validation, so every factor is positive.

    Raises
    ------
    exc.ScalerRangeExceeded
        If a column factor cannot be represented.
    """
    A = instance.matrix
    factors = instance.targets.c / col_sums(A)
    current = _normalized(A, factors, A.cols, "A(0)")
    row_scaler, col_scaler = _accumulate(
        np.ones(A.n_rows), np.ones(A.n_cols), col_factors=factors
    )
    return ScalingState(
        instance=instance,
        current=current,
        phase="A",
        t=0,
        row_scaler=row_scaler,
        col_scaler=col_scaler,
    )


def row_step(state: ScalingState) -> ScalingState:
    """``B(t)`` from ``A(t)``: scale every row to its target.

    Raises
    ------
    ValueError
        If ``state`` is not an ``A`` iterate.
    exc.InternalZeroRow
        If a row sums to zero, which a validated instance never produces.
    exc.ScalerRangeExceeded
        If ``B(t)`` or its scalers cannot be represented.
    """
    if state.phase != "A":
        raise ValueError(f"row_step needs phase 'A', got '{state.phase}'")
    M = state.current
    sums = row_sums(M)
    if np.any(sums <= 0):
        raise exc.InternalZeroRow(
            f"row {int(np.argmin(sums)) + 1} sums to zero at t={state.t}"
        )
    factors = state.instance.targets.r / sums
    current = _normalized(M, factors, M.rows, f"B({state.t})")
    row_scaler, col_scaler = _accumulate(
        state.row_scaler, state.col_scaler, row_factors=factors
    )
    return state._replace(
        current=current,
        phase="B",
        row_scaler=row_scaler,
        col_scaler=col_scaler,
    )


def col_step(state: ScalingState) -> ScalingState:
    """``A(t+1)`` from ``B(t)``: scale every column to its target.

    Raises
    ------
    ValueError
        If ``state`` is not a ``B`` iterate.
    exc.InternalZeroColumn
        If a column sums to zero, which a validated instance never produces.
    exc.ScalerRangeExceeded
        If ``A(t+1)`` or its scalers cannot be represented.
    """
    if state.phase != "B":
        raise ValueError(f"col_step needs phase 'B', got '{state.phase}'")
    M = state.current
    sums = col_sums(M)
    if np.any(sums <= 0):
        raise exc.InternalZeroColumn(
            f"column {int(np.argmin(sums)) + 1} sums to zero at t={state.t}"
        )
    factors = state.instance.targets.c / sums
    current = _normalized(M, factors, M.cols, f"A({state.t + 1})")
    row_scaler, col_scaler = _accumulate(
        state.row_scaler, state.col_scaler, col_factors=factors
    )
    return state._replace(
        current=current,
        phase="A",
        t=state.t + 1,
        row_scaler=row_scaler,
        col_scaler=col_scaler,
    )


def _measured(
    state: ScalingState, targets: TargetVectors | None
) -> tuple[FloatArray, FloatArray]:
    """``(current marginal, target)`` on the side not fixed by the last
    normalization: rows for ``A`` iterates, columns for ``B`` iterates."""
    if targets is None:
        targets = state.instance.targets
    if state.phase == "A":
        return row_sums(state.current), targets.r
    return col_sums(state.current), targets.c


def error_l1(
    state: ScalingState, targets: TargetVectors | None = None
) -> float:
    """l1 distance between the measured marginal and its target."""
    sums, target = _measured(state, targets)
    return float(np.sum(np.abs(sums - target)))


def error_l2(
    state: ScalingState, targets: TargetVectors | None = None
) -> float:
    """l2 distance between the measured marginal and its target."""
    sums, target = _measured(state, targets)
    return float(np.sqrt(np.sum((sums - target) ** 2)))


def _marginal_kl(sums: FloatArray, target: FloatArray) -> float:
    h = float(target.sum())
    return float(kl_divergence(target / h, sums / h, validate=False))


def kl_marginal(
    state: ScalingState, targets: TargetVectors | None = None
) -> float:
    """``D_KL(target / h || marginal / h)`` on the measured side."""
    sums, target = _measured(state, targets)
    return _marginal_kl(sums, target)


def check_witness(
    instance: ScalingInstance, witness: SparseNonnegMatrix
) -> IndexArray:
    """Check that ``witness`` has the target marginals (within ``1e-6``
    relative to ``rho``) and lives on the support of ``A``.

    Returns
    -------
    numpy.ndarray
        For every witness entry, its position in ``A``'s entry list.

    Raises
    ------
    exc.WitnessInfeasible
        If the shape or a marginal is wrong.
    exc.WitnessSupportViolation
        If the witness stores an entry where ``A`` is zero.
    """
    A = instance.matrix
    if witness.shape != A.shape:
        raise exc.WitnessInfeasible(
            f"witness is {witness.n_rows}x{witness.n_cols}, "
            f"matrix is {A.n_rows}x{A.n_cols}"
        )
    tol = WITNESS_RTOL * instance.params.rho
    row_dev = np.max(np.abs(row_sums(witness) - instance.targets.r))
    col_dev = np.max(np.abs(col_sums(witness) - instance.targets.c))
    if row_dev > tol or col_dev > tol:
        raise exc.WitnessInfeasible(
            f"witness marginals deviate from the targets by "
            f"{max(row_dev, col_dev):.3g} (tolerance {tol:.3g})"
        )
    idx = support_index(A, witness)
    outside = np.flatnonzero(idx < 0)
    if outside.size:
        k = int(outside[0])
        raise exc.WitnessSupportViolation(
            f"witness entry ({int(witness.rows[k]) + 1}, "
            f"{int(witness.cols[k]) + 1}) is outside the matrix support"
        )
    return idx


class TraceRecord(NamedTuple):
    """Measurements taken on one half-step iterate."""

    t: int
    phase: Phase
    err1: float
    """l1 error of the measured marginal"""

    err2: float
    """l2 error of the measured marginal"""

    kl_row: float
    """``D_KL(pi_r || row sums / h)``"""

    kl_col: float
    """``D_KL(pi_c || column sums / h)``"""

    potential: float | None
    """``D(Z, iterate)``; None without a witness"""

    @property
    def kl_measured(self) -> float:
        return self.kl_row if self.phase == "A" else self.kl_col


class IterationTrace:
    """Records of the half-steps ``A(0), B(0), A(1), ...`` of one run."""

    def __init__(self, params: InstanceParams, has_witness: bool) -> None:
        self.log = logging.getLogger(
            "{0.__module__}.{0.__name__}".format(self.__class__)
        )
        self.params = params
        self.has_witness = has_witness
        self.records: list[TraceRecord] = []

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __getitem__(self, index: int) -> TraceRecord:
        return self.records[index]

    @property
    def best_error1(self) -> float:
        return min((r.err1 for r in self.records), default=math.inf)

    @property
    def best_error2(self) -> float:
        return min((r.err2 for r in self.records), default=math.inf)

    @property
    def best_kl(self) -> float:
        return min((r.kl_measured for r in self.records), default=math.inf)

    @property
    def potentials(self) -> list[float]:
        """``D(Z, .)`` along the interleaved sequence.

        Raises
        ------
        exc.WitnessRequired
            If the run had no witness.
        """
        if not self.has_witness:
            raise exc.WitnessRequired("trace was recorded without a witness")
        return [
            math.nan if r.potential is None else r.potential
            for r in self.records
        ]

    def write_csv(self, path: str | os.PathLike[str]) -> None:
        """Write one row per half-step with columns ``t, phase, err1, err2,
        kl_row, kl_col, pot_Z``.

        Floats are written with :func:`repr`, so identical traces give
        byte-identical files. ``pot_Z`` is empty without a witness.
        """
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for rec in self.records:
                writer.writerow(
                    [
                        rec.t,
                        rec.phase,
                        repr(rec.err1),
                        repr(rec.err2),
                        repr(rec.kl_row),
                        repr(rec.kl_col),
                        "" if rec.potential is None else repr(rec.potential),
                    ]
                )
        self.log.debug(f"Wrote {len(self.records)} trace records to {path}")


class ScalingResult(NamedTuple):
    state: ScalingState
    """The half-step that met the rule, or the last one computed."""

    trace: IterationTrace
    outcome: Outcome


def _record(
    state: ScalingState,
    witness: SparseNonnegMatrix | None,
    witness_index: IndexArray | None,
) -> TraceRecord:
    targets = state.instance.targets
    rows = row_sums(state.current)
    cols = col_sums(state.current)
    if state.phase == "A":
        dev = rows - targets.r
    else:
        dev = cols - targets.c
    potential = None
    if witness is not None and witness_index is not None:
        aligned = state.current.values[witness_index]
        potential = float(
            np.sum(rel_entr(witness.values, aligned)) / state.instance.params.h
        )
    return TraceRecord(
        t=state.t,
        phase=state.phase,
        err1=float(np.sum(np.abs(dev))),
        err2=float(np.sqrt(np.sum(dev**2))),
        kl_row=_marginal_kl(rows, targets.r),
        kl_col=_marginal_kl(cols, targets.c),
        potential=potential,
    )


def _satisfied(record: TraceRecord, rule: StoppingRule) -> bool:
    if rule.metric == "l1":
        return record.err1 <= rule.threshold
    if rule.metric == "l2":
        return record.err2 <= rule.threshold
    return record.kl_measured <= rule.threshold


def run(
    instance: ScalingInstance,
    rule: StoppingRule,
    witness: SparseNonnegMatrix | None = None,
) -> ScalingResult:
    """Run Sinkhorn-Knopp until a half-step meets ``rule``.

    Every iterate ``A(t)`` and ``B(t)`` for ``t = 0 .. T`` is measured on
    its free side, with ``T`` the rule's iteration budget. The run returns
    the first iterate meeting the rule, or ``B(T)`` with outcome
    ``"budget_exhausted"``. A run whose next iterate or scalers would leave
    the floating point range, which only happens on instances that are not
    scalable, also ends as ``"budget_exhausted"`` at the last representable
    iterate.

    Parameters
    ----------
    instance : ScalingInstance
        A validated instance.
    rule : StoppingRule
        Metric, threshold and optional explicit budget.
    witness : SparseNonnegMatrix, optional
        A feasible scaling ``Z`` of ``A``. When given, ``D(Z, .)`` is
        recorded at every half-step.

    Returns
    -------
    ScalingResult

    Raises
    ------
    exc.WitnessInfeasible
        If the witness marginals are wrong.
    exc.WitnessSupportViolation
        If the witness leaves the support of ``A``.
    exc.BudgetOverflow
        If the rule's threshold is too small for a finite budget.
    """
    witness_index = None
    if witness is not None:
        witness_index = check_witness(instance, witness)
    budget = rule_budget(rule, instance.params)
    LOGGER.debug(f"Running {rule} with budget {budget}")

    trace = IterationTrace(instance.params, witness is not None)
    state = initialize(instance)
    while True:
        record = _record(state, witness, witness_index)
        trace.append(record)
        LOGGER.debug(
            f"t={record.t} {record.phase}: err1={record.err1:.6g} "
            f"err2={record.err2:.6g} kl={record.kl_measured:.6g}"
        )
        if _satisfied(record, rule):
            LOGGER.info(
                f"Converged at {record.phase}({record.t}) with "
                f"err1={record.err1:.6g}, err2={record.err2:.6g}"
            )
            return ScalingResult(state, trace, "converged")
        if state.phase == "B" and state.t >= budget:
            LOGGER.warning(
                f"Budget of {budget} iterations exhausted; best "
                f"err1={trace.best_error1:.6g}, "
                f"err2={trace.best_error2:.6g}, kl={trace.best_kl:.6g}"
            )
            return ScalingResult(state, trace, "budget_exhausted")
        try:
            if state.phase == "A":
                state = row_step(state)
            else:
                state = col_step(state)
        except exc.ScalerRangeExceeded as err:
            LOGGER.warning(
                f"Stopping at {state.phase}({state.t}) of a budget of "
                f"{budget}: {err}; best err1={trace.best_error1:.6g}, "
                f"err2={trace.best_error2:.6g}, kl={trace.best_kl:.6g}"
            )
            return ScalingResult(state, trace, "budget_exhausted")


class PotentialCertificate(BaseModel):
    """Checks of the potential ``D(Z, .)`` along a traced run."""

    model_config = ConfigDict(frozen=True)

    steps: int
    initial_potential: float
    initial_bound: float
    """``ln(1 + 2 Delta rho / nu)``"""

    initial_ok: bool
    min_potential: float
    nonnegative_ok: bool
    max_identity_error: float
    """Largest ``|D(Z, X) - D(Z, next X) - kl_measured(X)|`` over
    consecutive half-steps."""

    identity_ok: bool
    monotone_ok: bool

    @property
    def ok(self) -> bool:
        return (
            self.initial_ok
            and self.nonnegative_ok
            and self.identity_ok
            and self.monotone_ok
        )


def certify_potential(
    trace: IterationTrace, tol: float = 1e-9
) -> PotentialCertificate:
    """Check the potential recorded in ``trace``:

    * ``D(Z, A(0)) <= ln(1 + 2 Delta rho / nu) + tol``,
    * ``D(Z, .) >= -tol`` at every half-step,
    * each drop ``D(Z, X) - D(Z, next X)`` equals the measured marginal
      KL-divergence of ``X`` within ``tol``,
    * the potential never increases by more than ``tol``.

    Raises
    ------
    exc.WitnessRequired
        If the trace was recorded without a witness.
    """
    pots = np.asarray(trace.potentials, dtype=np.float64)
    kls = np.asarray([r.kl_measured for r in trace.records])
    bound = trace.params.potential_bound()
    drops = pots[:-1] - pots[1:]
    identity_err = (
        float(np.max(np.abs(drops - kls[:-1]))) if drops.size else 0.0
    )
    cert = PotentialCertificate(
        steps=len(trace),
        initial_potential=float(pots[0]),
        initial_bound=bound,
        initial_ok=bool(pots[0] <= bound + tol),
        min_potential=float(pots.min()),
        nonnegative_ok=bool(pots.min() >= -tol),
        max_identity_error=identity_err,
        identity_ok=identity_err <= tol,
        monotone_ok=bool(np.all(drops >= -tol)),
    )
    if not cert.ok:
        LOGGER.warning(f"Potential certificate failed: {cert}")
    return cert

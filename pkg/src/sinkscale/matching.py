"""
Matching
==============
Telling apart bipartite graphs that have a perfect matching from graphs
whose largest matching has at most ``n (1 - eps)`` edges, by running
Sinkhorn-Knopp on the adjacency matrix with doubly stochastic targets.

The certificate behind the negative direction: if a column (or row)
stochastic matrix ``Y`` supported on the edges of ``G`` has row-sum l1 error
``e``, every set ``S`` of left vertices has at least ``|S| - e`` neighbours,
so ``G`` has a matching with at least ``n - e`` edges.

Graphs whose largest matching lies strictly between ``n (1 - eps)`` and
``n`` can receive either verdict.
"""

from __future__ import annotations

import logging
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from sinkscale import exc
from sinkscale.core import (
    InstanceParams,
    SparseNonnegMatrix,
    col_sums,
    iteration_budget,
    row_sums,
    uniform_targets,
    validate_instance,
)
from sinkscale.sinkhorn import ScalingResult, StoppingRule, run

LOGGER = logging.getLogger(__name__)

Verdict = Literal["perfect_matching_likely", "max_matching_below"]
Side = Literal["left", "right"]

STOCHASTIC_ATOL = 1e-9


class BipartiteGraph(BaseModel):
    """A bipartite graph with 0-based vertex indices on each side."""

    model_config = ConfigDict(frozen=True)

    n_left: int = Field(gt=0)
    n_right: int = Field(gt=0)
    edges: tuple[tuple[int, int], ...] = ()

    @model_validator(mode="after")
    def check_edges(self) -> BipartiteGraph:
        seen: set[tuple[int, int]] = set()
        for i, j in self.edges:
            if not (0 <= i < self.n_left and 0 <= j < self.n_right):
                raise ValueError(f"edge ({i}, {j}) out of range")
            if (i, j) in seen:
                raise ValueError(f"edge ({i}, {j}) repeated")
            seen.add((i, j))
        return self

    def degrees(self) -> tuple[list[int], list[int]]:
        left = [0] * self.n_left
        right = [0] * self.n_right
        for i, j in self.edges:
            left[i] += 1
            right[j] += 1
        return left, right

    def isolated_vertex(self) -> tuple[Side, int] | None:
        """First vertex without edges as ``(side, 1-based index)``, left
        side first, or None."""
        left, right = self.degrees()
        for side, degs in (("left", left), ("right", right)):
            for index, deg in enumerate(degs):
                if deg == 0:
                    return side, index + 1  # type: ignore[return-value]
        return None


class DistinguisherVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    verdict: Verdict
    bound: float | None = None
    """``n (1 - eps)`` for a negative verdict."""

    iterations_used: int
    achieved_error1: float | None
    """Smallest l1 error reached; None when no iteration ran."""

    budget: int

    @property
    def perfect_matching_likely(self) -> bool:
        return self.verdict == "perfect_matching_likely"


def adjacency_matrix(G: BipartiteGraph) -> SparseNonnegMatrix:
    """0/1 matrix with a one at every edge, in edge-list order."""
    if not G.edges:
        return SparseNonnegMatrix(G.n_left, G.n_right, [], [], [])
    rows, cols = zip(*G.edges)
    return SparseNonnegMatrix(
        G.n_left, G.n_right, rows, cols, np.ones(len(G.edges))
    )


def hall_deficiency_bound(
    Y: SparseNonnegMatrix, eps_times_n: float | None = None
) -> float:
    """l1 error of a column (or row) stochastic ``Y`` on its free side.

    A graph containing the support of ``Y`` has a matching with at least
    ``n - hall_deficiency_bound(Y)`` edges. When ``eps_times_n`` is given
    the approximate Hall condition ``|N(S)| >= |S| - eps_times_n`` is
    reported as certified or not.

    Raises
    ------
    exc.NotSquare
        If ``Y`` is not square.
    exc.NotStochastic
        If neither all column sums nor all row sums are one within
        ``1e-9``.
    """
    if Y.n_rows != Y.n_cols:
        raise exc.NotSquare(f"expected a square matrix, got {Y.shape}")
    rows = row_sums(Y)
    cols = col_sums(Y)
    if np.all(np.abs(cols - 1.0) <= STOCHASTIC_ATOL):
        error = float(np.sum(np.abs(rows - 1.0)))
    elif np.all(np.abs(rows - 1.0) <= STOCHASTIC_ATOL):
        error = float(np.sum(np.abs(cols - 1.0)))
    else:
        raise exc.NotStochastic("matrix is neither column nor row stochastic")
    if eps_times_n is not None:
        certified = "certified" if error <= eps_times_n else "not certified"
        LOGGER.debug(
            f"Approximate Hall condition with deficiency {eps_times_n:g} "
            f"{certified} (error {error:.6g})"
        )
    return error


def matching_size_floor(Y: SparseNonnegMatrix) -> int:
    """Smallest matching size guaranteed by ``Y``:
    ``ceil(n - hall_deficiency_bound(Y))``."""
    n = Y.n_rows
    return max(0, math.ceil(n - hall_deficiency_bound(Y) - STOCHASTIC_ATOL))


def distinguisher_budget(G: BipartiteGraph, eps: float) -> int:
    """``ceil(2 ln(1 + 2 Delta) / eps**2)``, the iteration budget for the
    l1 threshold ``n eps`` on a 0/1 matrix with uniform targets.

    ``Delta`` is the largest right-side degree.
    """
    _, right = G.degrees()
    params = InstanceParams(
        h=float(G.n_left), rho=1.0, nu=1.0, delta_cols=max(1, max(right))
    )
    return iteration_budget(params, eps**2 / 2.0)


def _check_eps(eps: float) -> None:
    if not 0 < eps < 1:
        raise exc.InvalidParameter(f"eps must lie in (0, 1), got {eps}")


def scale_adjacency(G: BipartiteGraph, eps: float) -> ScalingResult:
    """Run Sinkhorn-Knopp on the adjacency matrix of ``G`` with ``r = c =
    1``, stopping at l1 error ``n eps`` or after
    :func:`distinguisher_budget` iterations.

    Raises
    ------
    exc.NotSquare
        If the sides differ in size.
    exc.IsolatedVertex
        If ``G`` has an isolated vertex.
    """
    _check_eps(eps)
    if G.n_left != G.n_right:
        raise exc.NotSquare(f"sides have {G.n_left} and {G.n_right} vertices")
    isolated = G.isolated_vertex()
    if isolated is not None:
        raise exc.IsolatedVertex(*isolated)
    n = G.n_left
    instance = validate_instance(adjacency_matrix(G), uniform_targets(n, n))
    rule = StoppingRule(
        metric="l1",
        threshold=n * eps,
        max_iters=distinguisher_budget(G, eps),
    )
    return run(instance, rule)


def distinguish(G: BipartiteGraph, eps: float) -> DistinguisherVerdict:
    """Decide between "``G`` has a perfect matching" and "every matching of
    ``G`` has at most ``n (1 - eps)`` edges".

    The verdict is positive when some half-step reaches l1 error ``n eps``
    within the budget. A graph with an isolated vertex gets a negative
    verdict without iterating.

    Raises
    ------
    exc.InvalidParameter
        If ``eps`` is not in ``(0, 1)``.
    exc.NotSquare
        If the sides differ in size.
    """
    n = G.n_left
    try:
        result = scale_adjacency(G, eps)
    except exc.IsolatedVertex as err:
        LOGGER.info(f"{err}; no perfect matching")
        return DistinguisherVerdict(
            verdict="max_matching_below",
            bound=n * (1.0 - eps),
            iterations_used=0,
            achieved_error1=None,
            budget=0,
        )

    budget = distinguisher_budget(G, eps)
    if result.outcome == "converged":
        return DistinguisherVerdict(
            verdict="perfect_matching_likely",
            iterations_used=result.state.t,
            achieved_error1=result.trace[-1].err1,
            budget=budget,
        )
    return DistinguisherVerdict(
        verdict="max_matching_below",
        bound=n * (1.0 - eps),
        iterations_used=result.state.t,
        achieved_error1=result.trace.best_error1,
        budget=budget,
    )

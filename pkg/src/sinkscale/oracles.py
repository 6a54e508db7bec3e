"""
Oracles
==============
Independent reference implementations for checking the library:

* an exact maximum bipartite matching by augmenting paths,
* dense, loop-based recomputation of every divergence and error metric,
* generators of scalable instances with a known feasible scaling ``Z``,
* exhaustive and random bipartite graph families.

None of these share code paths with the sparse engine they check.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable, Iterator, Sequence
from typing import Any, Literal, NamedTuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator

from sinkscale import exc
from sinkscale.core import (
    FloatArray,
    IndexArray,
    SparseNonnegMatrix,
    TargetVectors,
)
from sinkscale.matching import BipartiteGraph
from sinkscale.util.rng import make_rng

LOGGER = logging.getLogger(__name__)

TargetKind = Literal["uniform", "random"]
DenseMetric = Literal[
    "kl",
    "matrix_kl",
    "pinsker",
    "gen_pinsker",
    "hellinger",
    "error_l1",
    "error_l2",
    "kl_marginal",
]

FIT_TOL = 1e-12
FIT_MAX_ITERS = 10_000
MAX_ATTEMPTS = 100


def max_matching_exact(G: BipartiteGraph) -> int:
    """Size of a maximum matching, by repeated augmenting-path search from
    every left vertex."""
    adj: list[list[int]] = [[] for _ in range(G.n_left)]
    for i, j in G.edges:
        adj[i].append(j)
    match_right: list[int | None] = [None] * G.n_right

    def augment(i: int, seen: list[bool]) -> bool:
        for j in adj[i]:
            if seen[j]:
                continue
            seen[j] = True
            owner = match_right[j]
            if owner is None or augment(owner, seen):
                match_right[j] = i
                return True
        return False

    size = 0
    for i in range(G.n_left):
        if augment(i, [False] * G.n_right):
            size += 1
    return size


class GeneratorConfig(BaseModel):
    """Parameters of :func:`gen_scalable_instance`.

    With ``targets="uniform"`` the witness is doubly stochastic (``n`` must
    equal ``m``) and its support is a union of ``round(density * n)``
    disjoint perfect matchings. With ``targets="random"`` each entry is kept
    with probability ``density`` (plus a cover of every row and column) and
    the targets are the marginals of the witness.
    """

    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    m: int = Field(ge=1)
    density: float = Field(gt=0, le=1)
    seed: int = Field(ge=0, lt=2**64)
    perturbation_range: tuple[float, float] = (0.5, 2.0)
    targets: TargetKind = "uniform"

    @model_validator(mode="after")
    def check_config(self) -> GeneratorConfig:
        lo, hi = self.perturbation_range
        if not 0 < lo <= hi:
            raise ValueError(
                f"perturbation_range must satisfy 0 < lo <= hi, got "
                f"{self.perturbation_range}"
            )
        if self.targets == "uniform" and self.n != self.m:
            raise ValueError("uniform targets need n == m")
        return self


class GeneratedInstance(NamedTuple):
    matrix: SparseNonnegMatrix
    """``diag(row_factors) . witness . diag(col_factors)``"""

    witness: SparseNonnegMatrix
    targets: TargetVectors
    row_factors: FloatArray
    col_factors: FloatArray


def _shifted_matchings(
    rng: np.random.Generator, n: int, density: float
) -> tuple[IndexArray, IndexArray]:
    k = min(n, max(1, round(density * n)))
    shifts = rng.choice(n, size=k, replace=False)
    row_perm = rng.permutation(n)
    col_perm = rng.permutation(n)
    rows = np.repeat(np.arange(n), k)
    cols = (rows + np.tile(shifts, n)) % n
    return row_perm[rows], col_perm[cols]


def _covered_mask(
    rng: np.random.Generator, n: int, m: int, density: float
) -> tuple[IndexArray, IndexArray]:
    mask = rng.random((n, m)) < density
    for k in range(max(n, m)):
        mask[k % n, k % m] = True
    rows, cols = np.nonzero(mask)
    return rows, cols


def _proportional_fit(
    rows: IndexArray,
    cols: IndexArray,
    values: FloatArray,
    r: FloatArray,
    c: FloatArray,
) -> FloatArray | None:
    """Alternately fit rows and columns until both marginals are within
    ``1e-12`` of the targets; None if that takes more than 10000 sweeps."""
    x = values.copy()
    for _ in range(FIT_MAX_ITERS):
        x *= (r / np.bincount(rows, weights=x, minlength=r.size))[rows]
        x *= (c / np.bincount(cols, weights=x, minlength=c.size))[cols]
        row_dev = np.abs(np.bincount(rows, weights=x, minlength=r.size) - r)
        if row_dev.max() <= FIT_TOL * r.max():
            return x
    return None


def gen_scalable_instance(cfg: GeneratorConfig) -> GeneratedInstance:
    """Build a matrix ``A`` that is scalable to the returned targets, along
    with a feasible scaling ``Z`` of it.

    ``Z`` is drawn first (random support, values uniform in ``[1, 10]``,
    fitted to the targets), then ``A = diag(u) . Z . diag(v)`` with ``u`` and
    ``v`` uniform in ``perturbation_range``. The same config always gives
    the same instance.

    Raises
    ------
    exc.DegenerateSupport
        If no fitted witness is found in 100 attempts.
    """
    rng = make_rng(cfg.seed)
    for attempt in range(MAX_ATTEMPTS):
        if cfg.targets == "uniform":
            rows, cols = _shifted_matchings(rng, cfg.n, cfg.density)
        else:
            rows, cols = _covered_mask(rng, cfg.n, cfg.m, cfg.density)
        base = rng.uniform(1.0, 10.0, size=rows.size)
        if cfg.targets == "uniform":
            r = np.ones(cfg.n)
            c = np.ones(cfg.m)
            z_values = _proportional_fit(rows, cols, base, r, c)
        else:
            z_values = base
            r = np.bincount(rows, weights=base, minlength=cfg.n)
            c = np.bincount(cols, weights=base, minlength=cfg.m)
        if z_values is not None and np.all(z_values > 0):
            break
        LOGGER.debug(f"Attempt {attempt + 1}: witness fit did not converge")
    else:
        raise exc.DegenerateSupport(
            f"no feasible witness after {MAX_ATTEMPTS} attempts for {cfg}"
        )

    lo, hi = cfg.perturbation_range
    u = rng.uniform(lo, hi, size=cfg.n)
    v = rng.uniform(lo, hi, size=cfg.m)
    witness = SparseNonnegMatrix(cfg.n, cfg.m, rows, cols, z_values)
    matrix = witness.with_values(z_values * u[rows] * v[cols])
    return GeneratedInstance(
        matrix=matrix,
        witness=witness,
        targets=TargetVectors(r, c),
        row_factors=u,
        col_factors=v,
    )


def _dense_kl(p: Sequence[float], q: Sequence[float]) -> float:
    total = 0.0
    for pi, qi in zip(p, q):
        if pi == 0:
            continue
        if qi == 0:
            return math.inf
        total += pi * math.log(pi / qi)
    return total


def _dense_matrix_kl(M: ArrayLike, N: ArrayLike, h: float) -> float:
    m_arr = np.asarray(M, dtype=np.float64)
    n_arr = np.asarray(N, dtype=np.float64)
    total = 0.0
    for i in range(m_arr.shape[0]):
        for j in range(m_arr.shape[1]):
            mij, nij = float(m_arr[i, j]), float(n_arr[i, j])
            if mij == 0:
                continue
            if nij == 0:
                return math.inf
            total += mij * math.log(mij / nij)
    return total / h


def _dense_pinsker(p: Sequence[float], q: Sequence[float]) -> float:
    return 0.5 * sum(abs(pi - qi) for pi, qi in zip(p, q)) ** 2


def _dense_gen_pinsker(
    p: Sequence[float], q: Sequence[float], theta: float
) -> float:
    a = math.log(1.0 + theta) / theta
    large = 0.0
    small = 0.0
    for pi, qi in zip(p, q):
        if qi > (1.0 + theta) * pi:
            large += abs(qi - pi)
        elif pi > 0:
            small += (qi - pi) ** 2 / pi
    return (1.0 - a) * (large + small / theta)


def _dense_hellinger(p: Sequence[float], q: Sequence[float]) -> float:
    return math.sqrt(
        sum((math.sqrt(pi) - math.sqrt(qi)) ** 2 for pi, qi in zip(p, q))
    )


def _dense_marginal(
    X: ArrayLike, r: Sequence[float], c: Sequence[float], phase: str
) -> tuple[list[float], list[float]]:
    arr = np.asarray(X, dtype=np.float64)
    n_rows, n_cols = arr.shape
    if phase == "A":
        sums = [
            sum(float(arr[i, j]) for j in range(n_cols)) for i in range(n_rows)
        ]
        return sums, list(r)
    sums = [
        sum(float(arr[i, j]) for i in range(n_rows)) for j in range(n_cols)
    ]
    return sums, list(c)


def _dense_error_l1(
    X: ArrayLike, r: Sequence[float], c: Sequence[float], phase: str
) -> float:
    sums, target = _dense_marginal(X, r, c, phase)
    return sum(abs(s - t) for s, t in zip(sums, target))


def _dense_error_l2(
    X: ArrayLike, r: Sequence[float], c: Sequence[float], phase: str
) -> float:
    sums, target = _dense_marginal(X, r, c, phase)
    return math.sqrt(sum((s - t) ** 2 for s, t in zip(sums, target)))


def _dense_kl_marginal(
    X: ArrayLike, r: Sequence[float], c: Sequence[float], phase: str
) -> float:
    sums, target = _dense_marginal(X, r, c, phase)
    h = sum(target)
    return _dense_kl([t / h for t in target], [s / h for s in sums])


_DENSE: dict[str, Callable[..., float]] = {
    "kl": _dense_kl,
    "matrix_kl": _dense_matrix_kl,
    "pinsker": _dense_pinsker,
    "gen_pinsker": _dense_gen_pinsker,
    "hellinger": _dense_hellinger,
    "error_l1": _dense_error_l1,
    "error_l2": _dense_error_l2,
    "kl_marginal": _dense_kl_marginal,
}


def dense_recompute(metric: DenseMetric, *args: Any) -> float:
    """Evaluate ``metric`` with plain loops over dense inputs.

    Arguments per metric:

    * ``kl``, ``pinsker``, ``hellinger``: ``(p, q)``
    * ``gen_pinsker``: ``(p, q, theta)``
    * ``matrix_kl``: ``(M, N, h)`` with dense 2-D arrays
    * ``error_l1``, ``error_l2``, ``kl_marginal``: ``(X, r, c, phase)``
      with ``X`` the dense iterate and ``phase`` ``"A"`` (rows measured) or
      ``"B"`` (columns measured)
    """
    try:
        func = _DENSE[metric]
    except KeyError:
        raise ValueError(f"unknown metric '{metric}'")
    return func(*args)


def enumerate_bipartite_graphs(n: int) -> Iterator[BipartiteGraph]:
    """Every bipartite graph with ``n`` vertices per side, up to a
    permutation of the left side.

    Each left vertex is a neighbourhood bitmask; neighbourhoods are listed
    as non-decreasing sequences, so ``C(2**n + n - 1, n)`` graphs are
    produced.
    """
    for masks in itertools.combinations_with_replacement(range(2**n), n):
        edges = tuple(
            (i, j)
            for i, mask in enumerate(masks)
            for j in range(n)
            if mask >> j & 1
        )
        yield BipartiteGraph(n_left=n, n_right=n, edges=edges)


def random_bipartite_graph(
    rng: np.random.Generator,
    n: int,
    density: float,
    planted_matching: bool = False,
) -> BipartiteGraph:
    """``G(n, n, density)``, optionally with a random perfect matching
    added to the edge set."""
    mask = rng.random((n, n)) < density
    if planted_matching:
        mask[np.arange(n), rng.permutation(n)] = True
    rows, cols = np.nonzero(mask)
    return BipartiteGraph(
        n_left=n,
        n_right=n,
        edges=tuple((int(i), int(j)) for i, j in zip(rows, cols)),
    )

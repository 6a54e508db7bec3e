"""
Divergences
==============
Probability-vector and matrix divergences, the Pinsker-type lower bounds
built on them, and numerical checks of the calculus facts behind those
bounds.

Every vector operation reduces over the last axis, so a stack of pairs with
shape ``(batch, k)`` is handled in one call and returns one value per pair.
KL summands go through :func:`scipy.special.rel_entr`, which already
implements the ``0 ln 0 = 0`` and ``p > 0, q = 0 -> +inf`` conventions.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Iterator, Sequence
from typing import Literal, NamedTuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import rel_entr

from sinkscale import exc
from sinkscale.core import FloatArray, SparseNonnegMatrix, support_index

LOGGER = logging.getLogger(__name__)

Distribution = FloatArray
"""A non-negative vector summing to one, or a stack of them."""

Boundary = Literal["A", "B"]
PairFamily = Literal["dirichlet", "sparse_dirichlet", "zeroed", "spike"]

DISTRIBUTION_ATOL = 1e-12

ONE_MINUS_LN2 = 1.0 - math.log(2.0)
"""The constant ``C`` of the l1/l2 lower bound."""

HELLINGER_RATIO_LOW = ONE_MINUS_LN2
HELLINGER_RATIO_HIGH = ONE_MINUS_LN2 * (3.0 + 2.0 * math.sqrt(2.0))
"""Range of ``gen_pinsker_rhs(p, q, 1) / hellinger_distance(p, q)**2`` over
all pairs with ``p != q``."""

_SMALL_THETA = 1e-3
_SMALL_Z = 1e-2
_SERIES_TERMS = 12


def _collapse(values: FloatArray) -> float | FloatArray:
    if np.ndim(values) == 0:
        return float(values)
    return values


def as_distribution(p: ArrayLike, *, name: str = "p") -> Distribution:
    """Convert ``p`` to a float array and check it is a distribution (or a
    stack of distributions along the last axis).

    Raises
    ------
    exc.InvalidDistribution
        On an empty vector, a negative or non-finite entry, or a sum more
        than ``1e-12`` away from one.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise exc.InvalidDistribution(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise exc.InvalidDistribution(
            f"{name} has negative or non-finite entries"
        )
    if np.any(np.abs(arr.sum(axis=-1) - 1.0) > DISTRIBUTION_ATOL):
        raise exc.InvalidDistribution(f"{name} does not sum to one")
    return arr


def _pair(
    p: ArrayLike, q: ArrayLike, validate: bool
) -> tuple[FloatArray, FloatArray]:
    if validate:
        p_arr = as_distribution(p, name="p")
        q_arr = as_distribution(q, name="q")
    else:
        p_arr = np.asarray(p, dtype=np.float64)
        q_arr = np.asarray(q, dtype=np.float64)
    if p_arr.shape != q_arr.shape:
        raise exc.LengthMismatch(
            f"p has shape {p_arr.shape} but q has shape {q_arr.shape}"
        )
    return p_arr, q_arr


def _raw_kl(p: FloatArray, q: FloatArray) -> FloatArray:
    return np.sum(rel_entr(p, q), axis=-1)


def kl_divergence(
    p: ArrayLike, q: ArrayLike, *, validate: bool = True
) -> float | FloatArray:
    """KL-divergence ``sum_i p_i ln(p_i / q_i)``.

    Terms with ``p_i = 0`` are zero; a term with ``p_i > 0`` and
    ``q_i = 0`` makes the result ``+inf``. Rounding can only push the sum
    below zero by a few ulps, so the result is clipped at zero.

    Parameters
    ----------
    p, q : array-like
        Distributions of equal shape.
    validate : bool
        Check that both inputs are distributions.

    Raises
    ------
    exc.LengthMismatch
        If the shapes differ.
    """
    p_arr, q_arr = _pair(p, q, validate)
    return _collapse(np.maximum(_raw_kl(p_arr, q_arr), 0.0))


def matrix_kl(
    M: SparseNonnegMatrix, N: SparseNonnegMatrix, h: float
) -> float:
    """``(1/h) sum_ij M_ij ln(M_ij / N_ij)``.

    Summands where ``M_ij = 0`` vanish; an entry stored in ``M`` but not in
    ``N`` makes the result ``+inf``. The value can be negative when ``M``
    and ``N`` have different totals.

    Raises
    ------
    exc.DimensionMismatch
        If the matrices have different shapes.
    exc.InvalidParameter
        If ``h`` is not positive.
    """
    if not h > 0:
        raise exc.InvalidParameter(f"h must be positive, got {h}")
    idx = support_index(N, M)
    if np.any(idx < 0):
        return math.inf
    return float(np.sum(rel_entr(M.values, N.values[idx])) / h)


def pinsker_lower_bound(
    p: ArrayLike, q: ArrayLike, *, validate: bool = True
) -> float | FloatArray:
    """``||p - q||_1**2 / 2``."""
    p_arr, q_arr = _pair(p, q, validate)
    l1 = np.sum(np.abs(p_arr - q_arr), axis=-1)
    return _collapse(0.5 * l1**2)


class ThetaConstants(BaseModel):
    """The exponents ``a`` and ``b`` in ``1 + t <= exp(a t)`` (for
    ``t >= theta``) and ``1 + t <= exp(t - b t**2)`` (for ``t <= theta``)."""

    model_config = ConfigDict(frozen=True)

    theta: float = Field(gt=0)
    a_theta: float
    """``ln(1 + theta) / theta``"""

    b_theta: float
    """``(1 - a_theta) / theta``"""


def theta_constants(theta: float) -> ThetaConstants:
    """Compute ``a_theta`` and ``b_theta``.

    For ``theta < 1e-3`` ``b_theta`` comes from its Taylor series
    ``1/2 - theta/3 + theta**2/4 - ...``; the closed form would cancel.

    Raises
    ------
    exc.NonpositiveTheta
        If ``theta`` is not finite and strictly positive.
    """
    if not (math.isfinite(theta) and theta > 0):
        raise exc.NonpositiveTheta(f"theta must be positive, got {theta}")
    a = math.log1p(theta) / theta
    if theta < _SMALL_THETA:
        b = sum(
            (-1) ** k * theta**k / (k + 2) for k in range(_SERIES_TERMS)
        )
    else:
        b = (1.0 - a) / theta
    return ThetaConstants(theta=theta, a_theta=a, b_theta=b)


def _split_sums(
    p: FloatArray, q: FloatArray, factor: float, boundary: Boundary
) -> tuple[FloatArray, FloatArray]:
    """``(sum over the large-ratio set of |q - p|, sum over the rest of
    (q - p)**2 / p)`` where the large-ratio set is ``q > factor * p``
    (``>=`` with ``boundary="A"``)."""
    diff = q - p
    if boundary == "A":
        large = q >= factor * p
    else:
        large = q > factor * p
    chi = np.divide(diff**2, p, out=np.zeros_like(diff), where=p > 0)
    l1_part = np.sum(np.where(large, np.abs(diff), 0.0), axis=-1)
    chi_part = np.sum(np.where(large, 0.0, chi), axis=-1)
    return l1_part, chi_part


def gen_pinsker_rhs(
    p: ArrayLike,
    q: ArrayLike,
    theta: float,
    *,
    boundary: Boundary = "B",
    validate: bool = True,
) -> float | FloatArray:
    """Right-hand side of the generalized Pinsker inequality,

    ``(1 - a_theta) * (sum_{i in A} |q_i - p_i|
    + (1/theta) * sum_{i in B} (q_i - p_i)**2 / p_i)``

    with ``A = {i : q_i > (1 + theta) p_i}`` and ``B`` its complement.

    Parameters
    ----------
    p, q : array-like
        Distributions of equal shape.
    theta : float
        Split parameter, strictly positive.
    boundary : {"B", "A"}
        Set receiving the indices with ``q_i == (1 + theta) p_i``. Both
        summand forms agree there, so the choice does not change the value.
    validate : bool
        Check that both inputs are distributions.

    Notes
    -----
    An index with ``p_i = 0 < q_i`` always falls in ``A``; indices with
    ``p_i = q_i = 0`` contribute nothing.

    Raises
    ------
    exc.LengthMismatch
        If the shapes differ.
    exc.NonpositiveTheta
        If ``theta`` is not strictly positive.
    """
    consts = theta_constants(theta)
    p_arr, q_arr = _pair(p, q, validate)
    l1_part, chi_part = _split_sums(p_arr, q_arr, 1.0 + theta, boundary)
    b = consts.b_theta
    return _collapse(b * theta * l1_part + b * chi_part)


def kl_vs_l1_l2_rhs(
    p: ArrayLike, q: ArrayLike, *, validate: bool = True
) -> float | FloatArray:
    """``(1 - ln 2) * (sum_{q_i > 2 p_i} |q_i - p_i|
    + sum_{q_i <= 2 p_i} (q_i - p_i)**2 / p_i)``, the ``theta = 1`` case of
    :func:`gen_pinsker_rhs`."""
    p_arr, q_arr = _pair(p, q, validate)
    l1_part, chi_part = _split_sums(p_arr, q_arr, 2.0, "B")
    return _collapse(ONE_MINUS_LN2 * (l1_part + chi_part))


def hellinger_distance(
    p: ArrayLike, q: ArrayLike, *, validate: bool = True
) -> float | FloatArray:
    """``sqrt(sum_i (sqrt(p_i) - sqrt(q_i))**2)``."""
    p_arr, q_arr = _pair(p, q, validate)
    sq = (np.sqrt(p_arr) - np.sqrt(q_arr)) ** 2
    return _collapse(np.sqrt(np.sum(sq, axis=-1)))


def kl_upper_bound(
    p: ArrayLike, q: ArrayLike, *, validate: bool = True
) -> float | FloatArray:
    """``ln(1 + ||p - q||_2**2 / q_min)`` with ``q_min`` the smallest nonzero
    entry of ``q``; an upper bound on ``kl_divergence(p, q)``.

    Returns ``+inf`` when ``p`` puts mass where ``q`` has none.
    """
    p_arr, q_arr = _pair(p, q, validate)
    q_min = np.min(np.where(q_arr > 0, q_arr, np.inf), axis=-1)
    l2_sq = np.sum((p_arr - q_arr) ** 2, axis=-1)
    bound = np.log1p(l2_sq / q_min)
    outside = np.any((p_arr > 0) & (q_arr == 0), axis=-1)
    return _collapse(np.where(outside, np.inf, bound))


def l2_error_lower_bound(error2: float, rho: float, h: float) -> float:
    """``min(C e**2 / (2 rho h), C e / (sqrt(2) h))`` with ``C = 1 - ln 2``
    and ``e`` the l2 error of a marginal.

    Lower-bounds the KL-divergence between the normalized target and the
    normalized marginal whose l2 error is ``e``.
    """
    return min(
        ONE_MINUS_LN2 * error2**2 / (2.0 * rho * h),
        ONE_MINUS_LN2 * error2 / (math.sqrt(2.0) * h),
    )


def spike_pair(n: int) -> tuple[Distribution, Distribution]:
    """The uniform distribution on ``n`` points and a perturbation of it
    moving ``1/sqrt(n)`` of mass onto the first point.

    ``q_1 = 1/n + 1/sqrt(n)`` and ``q_i = 1/n - 1/((n-1) sqrt(n))``
    otherwise. On this pair the generalized bound at ``theta = 1`` is
    ``Theta(1/sqrt(n))`` while Pinsker's is ``Theta(1/n)``.

    Raises
    ------
    exc.InvalidParameter
        If ``n < 3``; for ``n = 2`` some ``q_i`` would be negative.
    """
    if n < 3:
        raise exc.InvalidParameter(f"spike pair needs n >= 3, got {n}")
    root = math.sqrt(n)
    p = np.full(n, 1.0 / n)
    q = np.full(n, 1.0 / n - 1.0 / ((n - 1) * root))
    q[0] = 1.0 / n + 1.0 / root
    return p, q


class ThetaFactsReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta: float
    points_checked: int
    max_violation: float
    """Largest value of ``ln(1 + t)`` minus the applicable exponent; at most
    zero up to rounding."""

    violations: int

    @property
    def ok(self) -> bool:
        return self.violations == 0


def verify_theta_facts(
    theta: float, grid: ArrayLike, slack: float = 1e-12
) -> ThetaFactsReport:
    """Check ``1 + t <= exp(a_theta t)`` for grid points ``t >= theta`` and
    ``1 + t <= exp(t - b_theta t**2)`` for ``t <= theta``.

    Both are compared in log space. Grid points with ``t <= -1`` lie outside
    the domain and are skipped.
    """
    consts = theta_constants(theta)
    t = np.asarray(grid, dtype=np.float64).ravel()
    t = t[t > -1.0]
    lhs = np.log1p(t)
    upper = np.where(
        t >= theta,
        consts.a_theta * t,
        t - consts.b_theta * t**2,
    )
    gap = lhs - upper
    # at t == theta both exponents apply
    at_theta = t == theta
    gap[at_theta] = np.maximum(
        gap[at_theta], lhs[at_theta] - (t - consts.b_theta * t**2)[at_theta]
    )
    report = ThetaFactsReport(
        theta=theta,
        points_checked=int(t.size),
        max_violation=float(gap.max()) if t.size else -math.inf,
        violations=int(np.count_nonzero(gap > slack)),
    )
    LOGGER.debug(f"Theta facts: {report}")
    return report


def _alternating_series(
    z: FloatArray, start: int, coef: Sequence[float]
) -> FloatArray:
    total = np.zeros_like(z)
    for offset, c in enumerate(coef):
        total += c * z ** (start + offset)
    return total


def _easier_gaps(z: FloatArray) -> FloatArray:
    """The three gaps ``z + z**2/2 - (1+z) ln(1+z)``, ``(1+z) ln(1+z) - z``
    and ``ln(1+z) - z + z**2/2`` as rows of a ``(3, len(z))`` array."""
    ks = range(3, 3 + _SERIES_TERMS)
    upper_coef = [(-1) ** (k + 1) / (k * (k - 1)) for k in ks]
    lower_coef = [
        (-1) ** k / (k * (k - 1)) for k in range(2, 2 + _SERIES_TERMS)
    ]
    log_coef = [(-1) ** (k + 1) / k for k in ks]

    small = z < _SMALL_Z
    zs = z[small]
    zl = z[~small]
    gaps = np.empty((3, z.size), dtype=np.float64)

    gaps[0, small] = _alternating_series(zs, 3, upper_coef)
    gaps[1, small] = _alternating_series(zs, 2, lower_coef)
    gaps[2, small] = _alternating_series(zs, 3, log_coef)

    f = (1.0 + zl) * np.log1p(zl)
    gaps[0, ~small] = zl + zl**2 / 2.0 - f
    gaps[1, ~small] = f - zl
    gaps[2, ~small] = np.log1p(zl) - zl + zl**2 / 2.0
    return gaps


class EasierInequalitiesReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    points_checked: int
    violations: int
    min_gap: float | None
    """Smallest gap over all points and all three inequalities."""

    @property
    def ok(self) -> bool:
        return self.violations == 0


def verify_easier_inequalities(grid: ArrayLike) -> EasierInequalitiesReport:
    """Check ``z + z**2/2 > (1+z) ln(1+z) > z`` and
    ``ln(1+z) > z - z**2/2`` strictly at every grid point ``z > 0``.

    Near zero the gaps are evaluated by their power series so that
    strictness is visible without cancellation. Non-positive points are
    skipped.
    """
    z = np.asarray(grid, dtype=np.float64).ravel()
    z = z[z > 0]
    if not z.size:
        return EasierInequalitiesReport(
            points_checked=0, violations=0, min_gap=None
        )
    gaps = _easier_gaps(z)
    return EasierInequalitiesReport(
        points_checked=int(z.size),
        violations=int(np.count_nonzero(np.any(gaps <= 0, axis=0))),
        min_gap=float(gaps.min()),
    )


class PairBatch(NamedTuple):
    """A stack of distribution pairs of one size and family."""

    family: PairFamily
    p: Distribution
    q: Distribution


_FAMILIES: tuple[PairFamily, ...] = (
    "dirichlet",
    "sparse_dirichlet",
    "zeroed",
    "spike",
)
_FAMILY_WEIGHTS = (0.7, 0.15, 0.1, 0.05)


def _draw_family(
    rng: np.random.Generator, family: PairFamily, count: int, k: int
) -> tuple[FloatArray, FloatArray]:
    if family == "spike" and k < 3:
        family = "dirichlet"
    if family == "dirichlet":
        return (
            rng.dirichlet(np.ones(k), size=count),
            rng.dirichlet(np.ones(k), size=count),
        )
    if family == "sparse_dirichlet":
        return (
            rng.dirichlet(np.full(k, 0.1), size=count),
            rng.dirichlet(np.full(k, 0.1), size=count),
        )
    if family == "zeroed":
        pair = []
        for _ in range(2):
            dist = rng.dirichlet(np.ones(k), size=count)
            keep = rng.random((count, k)) >= 0.3
            keep[np.arange(count), rng.integers(k, size=count)] = True
            dist = np.where(keep, dist, 0.0)
            pair.append(dist / dist.sum(axis=-1, keepdims=True))
        return pair[0], pair[1]

    base_p, base_q = spike_pair(k)
    perms = np.argsort(rng.random((count, k)), axis=-1)
    p = np.broadcast_to(base_p, (count, k)).copy()
    q = np.take_along_axis(np.broadcast_to(base_q, (count, k)), perms, -1)
    swap = (rng.random(count) < 0.5)[:, None]
    return np.where(swap, q, p), np.where(swap, p, q)


def sample_pairs(
    rng: np.random.Generator,
    count: int,
    min_size: int = 2,
    max_size: int = 64,
) -> Iterator[PairBatch]:
    """Draw ``count`` random distribution pairs.

    Sizes are uniform in ``[min_size, max_size]``. Each pair comes from one
    of four families: symmetric Dirichlet(1), sparse Dirichlet(0.1) (nearly
    disjoint supports), Dirichlet with about 30% of entries zeroed, and a
    randomly permuted uniform-vs-spike pair in random order. Pairs are
    grouped by ``(size, family)`` and yielded in sorted group order, so the
    stream depends only on the generator state.
    """
    if count < 0:
        raise exc.InvalidParameter(f"count must be >= 0, got {count}")
    if not 1 <= min_size <= max_size:
        raise exc.InvalidParameter(
            f"invalid size range [{min_size}, {max_size}]"
        )
    if count == 0:
        return
    sizes = rng.integers(min_size, max_size + 1, size=count)
    families = rng.choice(len(_FAMILIES), size=count, p=_FAMILY_WEIGHTS)
    keys, counts = np.unique(
        np.stack([sizes, families], axis=-1), axis=0, return_counts=True
    )
    for (k, fam_idx), n in zip(keys, counts):
        family = _FAMILIES[int(fam_idx)]
        p, q = _draw_family(rng, family, int(n), int(k))
        yield PairBatch(family, p, q)


class InequalityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    checked: int
    violations: int
    worst_slack: float | None
    """Smallest finite ``lhs - rhs`` over every check, or None when nothing
    finite was checked."""

    by_inequality: dict[str, int]
    """Violation count per inequality."""

    thetas: tuple[float, ...]

    @property
    def ok(self) -> bool:
        return self.violations == 0


def verify_inequalities(
    batches: Iterable[PairBatch | tuple[ArrayLike, ArrayLike]],
    thetas: Sequence[float],
    slack: float = 1e-12,
) -> InequalityReport:
    """Check, for every pair, that

    * the KL-divergence is non-negative,
    * KL >= Pinsker's bound,
    * KL >= the generalized bound for each theta,
    * the generalized bound at ``theta = 1`` is at least
      ``(1 - ln 2)/2 * ||p - q||_1**2``,
    * KL >= the squared Hellinger distance.

    A check ``lhs >= rhs`` fails when ``lhs - rhs < -slack * (1 + |rhs|)``.
    An infinite left-hand side always passes.

    Raises
    ------
    exc.NonpositiveTheta
        If a theta is not strictly positive.
    """
    thetas = tuple(float(t) for t in thetas)
    for theta in thetas:
        theta_constants(theta)

    names = ["nonnegativity", "pinsker", "weakened_pinsker", "hellinger"]
    names += [f"gen_pinsker(theta={theta:g})" for theta in thetas]
    failures = dict.fromkeys(names, 0)
    worst = math.inf
    checked = 0
    bad_pairs = 0

    for batch in batches:
        if isinstance(batch, PairBatch):
            p, q = batch.p, batch.q
        else:
            p, q = batch
        p, q = _pair(p, q, validate=True)
        p, q = np.atleast_2d(p), np.atleast_2d(q)
        raw = _raw_kl(p, q)
        kl = np.maximum(raw, 0.0)
        l1 = np.sum(np.abs(p - q), axis=-1)
        checks: dict[str, tuple[FloatArray, FloatArray]] = {
            "nonnegativity": (raw, np.zeros_like(raw)),
            "pinsker": (kl, 0.5 * l1**2),
            "weakened_pinsker": (
                np.asarray(gen_pinsker_rhs(p, q, 1.0, validate=False)),
                0.5 * ONE_MINUS_LN2 * l1**2,
            ),
            "hellinger": (
                kl,
                np.asarray(hellinger_distance(p, q, validate=False)) ** 2,
            ),
        }
        for theta in thetas:
            rhs = np.asarray(gen_pinsker_rhs(p, q, theta, validate=False))
            checks[f"gen_pinsker(theta={theta:g})"] = (kl, rhs)

        failed_any = np.zeros(raw.shape, dtype=bool)
        for name, (lhs, rhs) in checks.items():
            margin = lhs - rhs
            failed = (np.isfinite(lhs)) & (
                margin < -slack * (1.0 + np.abs(rhs))
            )
            failures[name] += int(np.count_nonzero(failed))
            failed_any |= failed
            finite = margin[np.isfinite(margin)]
            if finite.size:
                worst = min(worst, float(finite.min()))
        checked += int(raw.size)
        bad_pairs += int(np.count_nonzero(failed_any))

    report = InequalityReport(
        checked=checked,
        violations=bad_pairs,
        worst_slack=worst if math.isfinite(worst) else None,
        by_inequality=failures,
        thetas=thetas,
    )
    if report.violations:
        LOGGER.warning(f"Inequality violations found: {failures}")
    else:
        LOGGER.info(f"Checked {checked} pairs, no violations")
    return report

import math

import numpy as np
import pytest
from pydantic import ValidationError

from sinkscale import exc
from sinkscale.core import (
    SparseNonnegMatrix,
    uniform_targets,
    validate_instance,
)
from sinkscale.matching import (
    BipartiteGraph,
    adjacency_matrix,
    distinguish,
    distinguisher_budget,
    hall_deficiency_bound,
    matching_size_floor,
    scale_adjacency,
)
from sinkscale.oracles import max_matching_exact, random_bipartite_graph
from sinkscale.sinkhorn import initialize


def _identity(n):
    return BipartiteGraph(
        n_left=n, n_right=n, edges=tuple((i, i) for i in range(n))
    )


def _complete(n):
    return BipartiteGraph(
        n_left=n,
        n_right=n,
        edges=tuple((i, j) for i in range(n) for j in range(n)),
    )


def _half_matching(n):
    """Two left vertices see everything, the rest only see right vertices
    0 and 1, so the largest matching has 4 edges."""
    edges = [(i, j) for i in (0, 1) for j in range(n)]
    edges += [(i, j) for i in range(2, n) for j in (0, 1)]
    return BipartiteGraph(n_left=n, n_right=n, edges=tuple(edges))


def _star_deficient():
    return BipartiteGraph(
        n_left=3,
        n_right=3,
        edges=((0, 0), (0, 1), (0, 2), (1, 0), (2, 0)),
    )


@pytest.mark.parametrize(
    "edges,message",
    (
        (((0, 3),), "out of range"),
        (((-1, 0),), "out of range"),
        (((0, 0), (0, 0)), "repeated"),
    ),
)
def test_invalid_graph(edges, message):
    with pytest.raises(ValidationError, match=message):
        BipartiteGraph(n_left=2, n_right=2, edges=edges)


def test_degrees_and_isolated_vertex():
    G = BipartiteGraph(n_left=2, n_right=3, edges=((0, 0), (1, 0), (0, 2)))
    assert G.degrees() == ([2, 1], [2, 0, 1])
    assert G.isolated_vertex() == ("right", 2)
    assert _identity(3).isolated_vertex() is None
    lonely = BipartiteGraph(n_left=2, n_right=1, edges=((1, 0),))
    assert lonely.isolated_vertex() == ("left", 1)


def test_adjacency_matrix():
    A = adjacency_matrix(_star_deficient())
    np.testing.assert_array_equal(
        A.to_dense(), [[1, 1, 1], [1, 0, 0], [1, 0, 0]]
    )
    assert adjacency_matrix(BipartiteGraph(n_left=2, n_right=2)).nnz == 0


@pytest.mark.parametrize(
    "dense,expected",
    (
        ([[0.5, 0.5], [0.5, 0.5]], 0.0),
        ([[0.6, 0.6], [0.4, 0.4]], 0.4),
        ([[0.6, 0.4], [0.6, 0.4]], 0.4),
        ([[1.0, 1.0], [0.0, 0.0]], 2.0),
    ),
)
def test_hall_deficiency_bound(dense, expected):
    Y = SparseNonnegMatrix.from_dense(dense)
    assert hall_deficiency_bound(Y) == pytest.approx(expected)


def test_hall_deficiency_bound_rejects():
    with pytest.raises(exc.NotStochastic):
        hall_deficiency_bound(SparseNonnegMatrix.from_dense([[1, 1], [1, 1]]))
    with pytest.raises(exc.NotSquare):
        hall_deficiency_bound(SparseNonnegMatrix.from_dense([[1.0, 1.0]]))


def test_matching_size_floor():
    Y = SparseNonnegMatrix.from_dense([[0.6, 0.6], [0.4, 0.4]])
    assert matching_size_floor(Y) == 2
    Y = SparseNonnegMatrix.from_dense([[1.0, 1.0], [0.0, 0.0]])
    assert matching_size_floor(Y) == 0


def test_first_iterate_of_deficient_graph_certifies_a_matching():
    G = _star_deficient()
    instance = validate_instance(adjacency_matrix(G), uniform_targets(3, 3))
    Y = initialize(instance).current
    assert hall_deficiency_bound(Y, eps_times_n=1.0) == pytest.approx(8 / 3)
    floor = matching_size_floor(Y)
    assert floor == 1
    assert floor <= max_matching_exact(G) == 2


@pytest.mark.parametrize(
    "G,eps,expected",
    (
        (_identity(4), 0.5, math.ceil(2 * math.log(3) / 0.25)),
        (_identity(4), 0.1, math.ceil(2 * math.log(3) / 0.01)),
        (_complete(3), 0.5, math.ceil(2 * math.log(7) / 0.25)),
        (_half_matching(8), 0.4, 36),
    ),
)
def test_distinguisher_budget(G, eps, expected):
    assert distinguisher_budget(G, eps) == expected


@pytest.mark.parametrize("G", (_identity(4), _complete(3), _identity(1)))
def test_distinguish_stops_at_first_iterate(G):
    verdict = distinguish(G, 0.5)
    assert verdict.perfect_matching_likely
    assert verdict.iterations_used == 0
    assert verdict.achieved_error1 <= 1e-12
    assert verdict.bound is None


def test_distinguish_negative():
    verdict = distinguish(_half_matching(8), 0.4)
    assert verdict.verdict == "max_matching_below"
    assert not verdict.perfect_matching_likely
    assert verdict.bound == pytest.approx(4.8)
    assert verdict.budget == 36
    assert verdict.iterations_used == 36
    # no matching beats 4 edges, so no iterate gets below 8 - 4
    assert verdict.achieved_error1 >= 4.0 - 1e-9


def test_distinguish_isolated_vertex():
    G = BipartiteGraph(n_left=2, n_right=2, edges=((0, 0), (1, 0)))
    verdict = distinguish(G, 0.25)
    assert verdict.verdict == "max_matching_below"
    assert verdict.iterations_used == 0
    assert verdict.budget == 0
    assert verdict.achieved_error1 is None
    with pytest.raises(exc.IsolatedVertex) as err:
        scale_adjacency(G, 0.25)
    assert (err.value.side, err.value.index) == ("right", 2)


def test_distinguish_rejects_rectangular_graph():
    G = BipartiteGraph(n_left=2, n_right=3, edges=((0, 0), (1, 1), (1, 2)))
    with pytest.raises(exc.NotSquare):
        distinguish(G, 0.5)


@pytest.mark.parametrize("eps", (0.0, 1.0, 1.5, -0.2))
def test_distinguish_rejects_eps(eps):
    with pytest.raises(exc.InvalidParameter):
        distinguish(_identity(2), eps)


@pytest.mark.parametrize("eps", (0.1, 0.25, 0.5))
def test_planted_matchings_are_accepted(rng, eps):
    for _ in range(20):
        n = int(rng.integers(2, 24))
        G = random_bipartite_graph(rng, n, 0.2, planted_matching=True)
        verdict = distinguish(G, eps)
        assert verdict.perfect_matching_likely
        assert verdict.iterations_used <= verdict.budget


@pytest.mark.parametrize("eps", (0.25, 0.5))
def test_positive_iterates_certify_large_matchings(rng, eps):
    for _ in range(40):
        n = int(rng.integers(2, 16))
        G = random_bipartite_graph(rng, n, 0.25)
        if G.isolated_vertex() is not None:
            continue
        result = scale_adjacency(G, eps)
        if result.outcome != "converged":
            continue
        floor = matching_size_floor(result.state.current)
        assert floor >= math.ceil(n * (1 - eps) - 1e-9)
        assert max_matching_exact(G) >= floor


EPS_GRID = (0.05, 0.1, 0.2, 0.3, 0.45, 0.6)


def test_verdict_is_monotone_in_eps(rng):
    for k in range(60):
        n = int(rng.integers(2, 16))
        G = random_bipartite_graph(
            rng, n, float(rng.uniform(0.1, 0.5)), planted_matching=k % 3 == 0
        )
        verdicts = [distinguish(G, eps) for eps in EPS_GRID]
        if max_matching_exact(G) == n:
            assert all(v.perfect_matching_likely for v in verdicts), G
        for i, low in enumerate(verdicts):
            if not low.perfect_matching_likely:
                continue
            # The trajectory does not depend on eps, so a looser threshold
            # is met no later, as long as the smaller budget reaches it.
            for high in verdicts[i + 1 :]:
                if low.iterations_used > high.budget:
                    continue
                assert high.perfect_matching_likely, G
                assert high.iterations_used <= low.iterations_used

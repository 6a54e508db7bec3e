import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import sparse
from scipy.sparse.csgraph import maximum_bipartite_matching

from sinkscale.core import (
    TargetVectors,
    col_sums,
    row_sums,
    validate_instance,
)
from sinkscale.divergence import (
    gen_pinsker_rhs,
    hellinger_distance,
    kl_divergence,
    matrix_kl,
    pinsker_lower_bound,
)
from sinkscale.matching import BipartiteGraph, adjacency_matrix
from sinkscale.oracles import (
    GeneratorConfig,
    dense_recompute,
    enumerate_bipartite_graphs,
    gen_scalable_instance,
    max_matching_exact,
    random_bipartite_graph,
)
from sinkscale.sinkhorn import (
    StoppingRule,
    certify_potential,
    col_step,
    error_l1,
    error_l2,
    initialize,
    kl_marginal,
    row_step,
    run,
)
from sinkscale.util.rng import make_rng


def _scipy_matching_size(G):
    adj = sparse.csr_array(adjacency_matrix(G).to_coo())
    match = maximum_bipartite_matching(adj, perm_type="column")
    return int(np.count_nonzero(match >= 0))


@pytest.mark.parametrize(
    "edges,n,expected",
    (
        (((0, 0), (1, 1), (2, 2), (3, 3)), 4, 4),
        (((0, 0), (0, 1), (0, 2)), 3, 1),
        (((0, 1), (1, 0), (1, 1), (2, 1)), 3, 2),
        ((), 2, 0),
    ),
)
def test_max_matching_exact(edges, n, expected):
    G = BipartiteGraph(n_left=n, n_right=n, edges=edges)
    assert max_matching_exact(G) == expected


def test_max_matching_needs_augmenting_paths():
    # greedy in edge order matches (0, 0) and then blocks vertex 1
    G = BipartiteGraph(n_left=2, n_right=2, edges=((0, 0), (0, 1), (1, 0)))
    assert max_matching_exact(G) == 2


def test_max_matching_agrees_with_scipy():
    rng = make_rng(7)
    G = random_bipartite_graph(rng, 8, 0.3)
    assert max_matching_exact(G) == _scipy_matching_size(G)
    for _ in range(50):
        n = int(rng.integers(1, 30))
        G = random_bipartite_graph(rng, n, float(rng.uniform(0.02, 0.3)))
        if not G.edges:
            continue
        assert max_matching_exact(G) == _scipy_matching_size(G)


def test_generator_is_deterministic():
    cfg = GeneratorConfig(n=10, m=10, density=0.3, seed=11)
    first = gen_scalable_instance(cfg)
    second = gen_scalable_instance(cfg)
    assert first.matrix.entries() == second.matrix.entries()
    assert first.witness.entries() == second.witness.entries()
    other = gen_scalable_instance(cfg.model_copy(update={"seed": 12}))
    assert other.matrix.entries() != first.matrix.entries()


@pytest.mark.parametrize(
    "cfg",
    (
        GeneratorConfig(n=1, m=1, density=1.0, seed=0),
        GeneratorConfig(n=2, m=2, density=1.0, seed=1),
        GeneratorConfig(n=20, m=20, density=0.3, seed=11),
        GeneratorConfig(n=7, m=13, density=0.2, seed=5, targets="random"),
        GeneratorConfig(n=30, m=4, density=0.5, seed=9, targets="random"),
    ),
)
def test_generated_witness_is_feasible(cfg):
    g = gen_scalable_instance(cfg)
    np.testing.assert_allclose(row_sums(g.witness), g.targets.r, rtol=1e-9)
    np.testing.assert_allclose(col_sums(g.witness), g.targets.c, rtol=1e-9)
    instance = validate_instance(g.matrix, g.targets)
    assert instance.params.rho >= 1.0
    expected = (
        g.row_factors[g.witness.rows]
        * g.witness.values
        * g.col_factors[g.witness.cols]
    )
    np.testing.assert_allclose(g.matrix.values, expected, rtol=1e-15)


def test_two_by_two_witness_is_doubly_stochastic():
    g = gen_scalable_instance(GeneratorConfig(n=2, m=2, density=1.0, seed=4))
    Z = g.witness.to_dense()
    assert Z[0, 0] == pytest.approx(Z[1, 1], abs=1e-10)
    assert Z[0, 0] + Z[0, 1] == pytest.approx(1.0, abs=1e-10)


def test_unit_perturbation_returns_witness():
    cfg = GeneratorConfig(
        n=6, m=6, density=0.5, seed=2, perturbation_range=(1.0, 1.0)
    )
    g = gen_scalable_instance(cfg)
    assert g.matrix.entries() == g.witness.entries()


@pytest.mark.parametrize(
    "kwargs",
    (
        {"n": 3, "m": 4, "density": 0.5, "seed": 0},
        {"n": 3, "m": 3, "density": 0.0, "seed": 0},
        {"n": 3, "m": 3, "density": 1.5, "seed": 0},
        {"n": 3, "m": 3, "density": 0.5, "seed": -1},
        {"n": 0, "m": 3, "density": 0.5, "seed": 0, "targets": "random"},
        {
            "n": 3,
            "m": 3,
            "density": 0.5,
            "seed": 0,
            "perturbation_range": (2.0, 1.0),
        },
        {
            "n": 3,
            "m": 3,
            "density": 0.5,
            "seed": 0,
            "perturbation_range": (0.0, 1.0),
        },
    ),
)
def test_invalid_generator_config(kwargs):
    with pytest.raises(ValidationError):
        GeneratorConfig(**kwargs)


def test_generated_instance_converges_with_certificate():
    cfg = GeneratorConfig(n=20, m=20, density=0.3, seed=11)
    g = gen_scalable_instance(cfg)
    instance = validate_instance(g.matrix, g.targets)
    result = run(instance, StoppingRule(metric="l1", threshold=0.1), g.witness)
    assert result.outcome == "converged"
    assert certify_potential(result.trace).ok


def test_dense_divergences_agree(rng):
    for _ in range(100):
        k = int(rng.integers(2, 12))
        p, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        dropped = rng.random(k) < 0.2
        dropped[0] = False
        p[dropped] = 0.0
        p /= p.sum()
        assert dense_recompute("kl", p, q) == pytest.approx(
            kl_divergence(p, q), rel=1e-12, abs=1e-15
        )
        assert dense_recompute("pinsker", p, q) == pytest.approx(
            pinsker_lower_bound(p, q), rel=1e-12
        )
        assert dense_recompute("hellinger", p, q) == pytest.approx(
            hellinger_distance(p, q), rel=1e-12
        )
        for theta in (0.1, 1.0, 10.0):
            assert dense_recompute("gen_pinsker", p, q, theta) == (
                pytest.approx(gen_pinsker_rhs(p, q, theta), rel=1e-9)
            )


def test_dense_matrix_kl_agrees(generated):
    M, N = generated.witness, generated.matrix
    h = generated.targets.h
    assert dense_recompute(
        "matrix_kl", M.to_dense(), N.to_dense(), h
    ) == pytest.approx(matrix_kl(M, N, h), rel=1e-12)


def test_dense_errors_agree(generated_random_targets):
    g = generated_random_targets
    instance = validate_instance(g.matrix, g.targets)
    r, c = instance.targets.r, instance.targets.c
    state = initialize(instance)
    for _ in range(5):
        for measured in (state, row_step(state)):
            X = measured.current.to_dense()
            args = (X, r, c, measured.phase)
            assert dense_recompute("error_l1", *args) == pytest.approx(
                error_l1(measured), rel=1e-9, abs=1e-12
            )
            assert dense_recompute("error_l2", *args) == pytest.approx(
                error_l2(measured), rel=1e-9, abs=1e-12
            )
            assert dense_recompute("kl_marginal", *args) == pytest.approx(
                kl_marginal(measured), rel=1e-6, abs=1e-13
            )
        state = col_step(row_step(state))


def test_dense_errors_of_feasible_matrix():
    X = np.full((3, 3), 1 / 3)
    targets = TargetVectors(np.ones(3), np.ones(3))
    for metric in ("error_l1", "error_l2", "kl_marginal"):
        value = dense_recompute(metric, X, targets.r, targets.c, "A")
        assert value == pytest.approx(0.0, abs=1e-15)


def test_dense_recompute_unknown_metric():
    with pytest.raises(ValueError):
        dense_recompute("linf", [1.0], [1.0])


@pytest.mark.parametrize(
    "n,count",
    (
        (1, 2),
        (2, 10),
        (3, 120),
    ),
)
def test_enumerate_bipartite_graphs(n, count):
    graphs = list(enumerate_bipartite_graphs(n))
    assert len(graphs) == count == math.comb(2**n + n - 1, n)
    assert all(G.n_left == G.n_right == n for G in graphs)


def test_random_graph_with_planted_matching(rng):
    for n in (1, 5, 17):
        G = random_bipartite_graph(rng, n, 0.1, planted_matching=True)
        assert max_matching_exact(G) == n

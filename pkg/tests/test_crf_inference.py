import math

import numpy as np
import pytest

from graph_factories import (
    random_loopy_graph,
    random_params,
    random_tree_graph,
    triangle_graph,
    zero_params,
)

from cqajoint.crf import (
    BpConfig,
    CrfParameters,
    bp_infer,
    brute_force_infer,
    log_node_potential,
    state_index,
)
from cqajoint.factorgraph import (
    FactorGraph,
    GraphEdge,
    GraphNode,
    NodeRef,
    make_edge,
)

EXACT_BP = BpConfig(damping=0.0, tolerance=1e-12, max_iters=200)


def isolated_nodes_graph(n, dim=1):
    nodes = [GraphNode(NodeRef("C", 1, m + 1), np.ones(dim), gold=0) for m in range(n)]
    return FactorGraph(nodes=nodes, edges=[])


def two_node_chain(theta_diag):
    """Two C nodes, zero node potentials, edge log-potential diagonal
    theta_diag on states (0,0) and (1,1), zero off-diagonal."""
    nodes = [GraphNode(NodeRef("C", 1, 1), np.zeros(1), gold=0),
             GraphNode(NodeRef("C", 1, 2), np.zeros(1), gold=0)]
    edge = GraphEdge(make_edge(nodes[0].ref, nodes[1].ref), 0, 1, np.array([1.0]))
    graph = FactorGraph(nodes=nodes, edges=[edge])
    params = CrfParameters(
        node_weights={"C": np.zeros(2)},
        edge_weights={"CC": np.array([[theta_diag], [0.0], [0.0], [theta_diag]])},
    )
    return graph, params


class TestLogNodePotential:
    def test_label_zero_is_pinned(self):
        params = CrfParameters(node_weights={"C": np.array([5.0, 3.0])}, edge_weights={})
        assert log_node_potential("C", 0, np.array([9.0]), params) == 0.0

    def test_dot_product(self):
        params = CrfParameters(node_weights={"A": np.array([1.0, 0.0])}, edge_weights={})
        assert log_node_potential("A", 1, np.array([2.0]), params) == 2.0

    def test_width_mismatch(self):
        params = CrfParameters(node_weights={"A": np.array([1.0, 0.0])}, edge_weights={})
        with pytest.raises(ValueError):
            log_node_potential("A", 1, np.array([2.0, 2.0]), params)


class TestBruteForce:
    def test_uniform_model(self):
        graph = isolated_nodes_graph(3)
        params = zero_params(graph, dim=1)
        result = brute_force_infer(graph, params)
        assert result.log_partition == pytest.approx(3 * math.log(2.0))
        assert np.allclose(result.node_marginals, 0.5)

    def test_two_node_chain_enumeration(self):
        # labelings weigh 2,1,1,2 -> Z=6, marginals 0.5, P(0,0)=1/3
        graph, params = two_node_chain(math.log(2.0))
        result = brute_force_infer(graph, params)
        assert result.log_partition == pytest.approx(math.log(6.0))
        assert np.allclose(result.node_marginals, 0.5)
        assert result.edge_marginals[0, state_index(0, 0)] == pytest.approx(1.0 / 3.0)

    def test_single_node_sigmoid(self):
        graph = isolated_nodes_graph(1)
        params = CrfParameters(node_weights={"C": np.array([1.0, 0.0])}, edge_weights={})
        result = brute_force_infer(graph, params)
        assert result.node_marginals[0, 1] == pytest.approx(math.e / (1.0 + math.e))

    def test_too_large_rejected(self):
        graph = isolated_nodes_graph(21)
        with pytest.raises(ValueError):
            brute_force_infer(graph, zero_params(graph, dim=1))

    def test_marginals_normalized(self):
        rng = np.random.default_rng(0)
        graph = random_loopy_graph(rng, 6)
        result = brute_force_infer(graph, random_params(rng, graph))
        assert np.allclose(result.node_marginals.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(result.edge_marginals.sum(axis=1), 1.0, atol=1e-9)


class TestBpOnTrees:
    def test_matches_enumeration_on_100_random_trees(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            n = int(rng.integers(2, 11))
            graph = random_tree_graph(rng, n)
            params = random_params(rng, graph)
            exact = brute_force_infer(graph, params)
            approx = bp_infer(graph, params, EXACT_BP)
            assert approx.converged, f"trial {trial} did not converge"
            err = np.max(np.abs(approx.node_marginals - exact.node_marginals))
            assert err <= 1e-8, f"trial {trial}: marginal error {err}"
            assert abs(approx.log_partition - exact.log_partition) <= 1e-8
            edge_err = np.max(np.abs(approx.edge_marginals - exact.edge_marginals))
            assert edge_err <= 1e-8

    def test_converges_within_diameter_plus_one_sweeps(self):
        # path graph of 6 nodes: diameter 5
        rng = np.random.default_rng(1)
        from graph_factories import edges_from_pairs, random_nodes
        nodes = random_nodes(rng, 6, tasks="C")
        pairs = [(k, k + 1) for k in range(5)]
        graph = FactorGraph(nodes=nodes, edges=edges_from_pairs(nodes, pairs))
        params = random_params(rng, graph)
        result = bp_infer(graph, params, BpConfig(damping=0.0, tolerance=1e-12, max_iters=7))
        assert result.converged
        assert result.iterations <= 6 + 1
        exact = brute_force_infer(graph, params)
        assert np.max(np.abs(result.node_marginals - exact.node_marginals)) <= 1e-8


class TestBpOnLoopyGraphs:
    def test_triangle_close_to_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            graph = triangle_graph(rng)
            params = random_params(rng, graph, edge_scale=0.5)
            exact = brute_force_infer(graph, params)
            approx = bp_infer(graph, params, BpConfig(damping=0.5, tolerance=1e-8,
                                                      max_iters=500))
            err = np.max(np.abs(approx.node_marginals - exact.node_marginals))
            assert err <= 0.05

    def test_all_zero_weights_uniform_in_one_iteration(self):
        rng = np.random.default_rng(3)
        graph = random_loopy_graph(rng, 7)
        result = bp_infer(graph, zero_params(graph), BpConfig())
        assert result.converged
        assert result.iterations == 1
        assert np.allclose(result.node_marginals, 0.5)
        assert np.allclose(result.edge_marginals, 0.25)

    def test_nonconvergence_reported_not_raised(self):
        rng = np.random.default_rng(11)
        graph = triangle_graph(rng)
        params = random_params(rng, graph, edge_scale=30.0)
        result = bp_infer(graph, params, BpConfig(damping=0.0, tolerance=1e-12,
                                                  max_iters=3))
        assert result.iterations == 3
        assert isinstance(result.converged, bool)

    def test_sequential_schedule_agrees_on_trees(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            graph = random_tree_graph(rng, int(rng.integers(2, 9)))
            params = random_params(rng, graph)
            exact = brute_force_infer(graph, params)
            seq = bp_infer(graph, params, BpConfig(schedule="sequential", damping=0.0,
                                                   tolerance=1e-12, max_iters=200))
            assert np.max(np.abs(seq.node_marginals - exact.node_marginals)) <= 1e-8


class TestBpInvariants:
    def test_beliefs_normalized(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            graph = random_loopy_graph(rng, int(rng.integers(3, 9)))
            result = bp_infer(graph, random_params(rng, graph), BpConfig(max_iters=300))
            assert np.allclose(result.node_marginals.sum(axis=1), 1.0, atol=1e-9)
            assert np.allclose(result.edge_marginals.sum(axis=1), 1.0, atol=1e-9)

    def test_local_consistency_at_convergence(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            graph = random_loopy_graph(rng, int(rng.integers(3, 9)))
            params = random_params(rng, graph, edge_scale=0.5)
            cfg = BpConfig(damping=0.3, tolerance=1e-10, max_iters=2000)
            result = bp_infer(graph, params, cfg)
            if not result.converged:
                continue
            for idx, edge in enumerate(graph.edges):
                pair = result.edge_marginals[idx].reshape(2, 2)
                np.testing.assert_allclose(pair.sum(axis=1),
                                           result.node_marginals[edge.u_index],
                                           atol=1e-6)
                np.testing.assert_allclose(pair.sum(axis=0),
                                           result.node_marginals[edge.v_index],
                                           atol=1e-6)

    def test_converged_messages_fixed_under_further_damped_iterations(self):
        rng = np.random.default_rng(19)
        graph = random_loopy_graph(rng, 6)
        params = random_params(rng, graph, edge_scale=0.4)
        first = bp_infer(graph, params, BpConfig(damping=0.5, tolerance=1e-12,
                                                 max_iters=5000))
        assert first.converged
        again = bp_infer(graph, params, BpConfig(damping=0.8, tolerance=1e-12,
                                                 max_iters=5000))
        assert again.converged
        np.testing.assert_allclose(first.node_marginals, again.node_marginals,
                                   atol=1e-7)

    def test_bethe_exact_on_forests(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            graph = random_tree_graph(rng, int(rng.integers(2, 10)))
            params = random_params(rng, graph)
            exact = brute_force_infer(graph, params)
            approx = bp_infer(graph, params, EXACT_BP)
            assert approx.log_partition == pytest.approx(exact.log_partition, abs=1e-8)

    def test_empty_edge_graph(self):
        graph = isolated_nodes_graph(4)
        params = CrfParameters(node_weights={"C": np.array([2.0, -1.0])}, edge_weights={})
        result = bp_infer(graph, params, BpConfig())
        exact = brute_force_infer(graph, params)
        assert np.allclose(result.node_marginals, exact.node_marginals)
        assert result.log_partition == pytest.approx(exact.log_partition)

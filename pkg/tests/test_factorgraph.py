import numpy as np
import pytest

from cqajoint.factorgraph import (
    EdgeRef,
    FactorGraph,
    GraphEdge,
    GraphNode,
    GroupEmbeddings,
    NodeRef,
    TopologyConfig,
    build_graph,
    dump_graph,
    edge_features,
    make_edge,
    resolve_topology,
)


def make_group(threads, comments, dim=2, seed=0, with_labels=True):
    """Uniform group: `threads` threads x `comments` comments each."""
    rng = np.random.default_rng(seed)
    sizes = [comments] * threads

    def vecs(count):
        return [rng.normal(size=dim) for _ in range(count)]

    return GroupEmbeddings(
        a_vectors=[vecs(m) for m in sizes],
        b_vectors=vecs(threads),
        c_vectors=[vecs(m) for m in sizes],
        a_labels=[[int(rng.random() < 0.5) for _ in range(m)] for m in sizes] if with_labels else None,
        b_labels=[int(rng.random() < 0.5) for _ in range(threads)] if with_labels else None,
        c_labels=[[int(rng.random() < 0.5) for _ in range(m)] for m in sizes] if with_labels else None,
    )


class TestNodeAndEdgeRefs:
    def test_b_node_has_no_comment_index(self):
        with pytest.raises(ValueError):
            NodeRef("B", 1, 2)
        with pytest.raises(ValueError):
            NodeRef("A", 1, None)

    def test_edge_kind_must_match_tasks(self):
        a, c = NodeRef("A", 1, 1), NodeRef("C", 1, 1)
        with pytest.raises(ValueError):
            EdgeRef("AB", a, c)
        assert make_edge(c, a).kind == "AC"

    def test_no_self_loops(self):
        a = NodeRef("A", 1, 1)
        with pytest.raises(ValueError):
            EdgeRef("AA", a, a)

    def test_intra_edges_stay_in_thread(self):
        with pytest.raises(ValueError):
            make_edge(NodeRef("C", 1, 1), NodeRef("C", 2, 1))


class TestPresets:
    def test_named_presets_resolve(self):
        acbc = resolve_topology("CRF_ACBC")
        assert acbc.across_ac == "one_to_one"
        assert acbc.across_bc == "many_to_one"
        assert acbc.across_ab == "null"
        assert acbc.intra_b == "null"
        allp = resolve_topology("CRF_all")
        assert allp.across_ab == "many_to_one"
        bf = resolve_topology("CRF_ACBC,B^f")
        assert bf.intra_b == "full" and bf.across_ac == "one_to_one"
        assert resolve_topology("CRF_ACBC,f").intra_a == "full"

    def test_unknown_preset_lists_known(self):
        with pytest.raises(KeyError, match="CRF_ACBC"):
            resolve_topology("CRF_bogus")


class TestBuildGraph:
    def test_acbc_counts(self):
        graph = build_graph(make_group(2, 2), "CRF_ACBC")
        assert graph.n_nodes == 10
        assert len(graph.nodes_of_task("A")) == 4
        assert len(graph.nodes_of_task("B")) == 2
        assert len(graph.nodes_of_task("C")) == 4
        assert len(graph.edges) == 8
        assert len(graph.edges_of_kind("AC")) == 4
        assert len(graph.edges_of_kind("BC")) == 4

    def test_all_preset_adds_ab(self):
        graph = build_graph(make_group(2, 2), "CRF_all")
        assert len(graph.edges) == 12
        assert len(graph.edges_of_kind("AB")) == 4

    def test_bf_with_full_c(self):
        graph = build_graph(make_group(2, 2), "CRF_ACBC,BfCf")
        # 8 across + 1 BB + one CC pair per thread
        assert len(graph.edges) == 11
        assert len(graph.edges_of_kind("BB")) == 1
        assert len(graph.edges_of_kind("CC")) == 2

    def test_edge_count_formulas_ragged(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            threads = int(rng.integers(1, 5))
            sizes = [int(rng.integers(1, 5)) for _ in range(threads)]
            group = GroupEmbeddings(
                a_vectors=[[np.zeros(2)] * m for m in sizes],
                b_vectors=[np.zeros(2)] * threads,
                c_vectors=[[np.zeros(2)] * m for m in sizes],
            )
            graph = build_graph(group, "CRF_all,f")
            total = sum(sizes)
            assert len(graph.edges_of_kind("AC")) == total
            assert len(graph.edges_of_kind("BC")) == total
            assert len(graph.edges_of_kind("AB")) == total
            assert len(graph.edges_of_kind("BB")) == threads * (threads - 1) // 2
            assert len(graph.edges_of_kind("CC")) == sum(m * (m - 1) // 2 for m in sizes)
            assert len(graph.edges_of_kind("AA")) == sum(m * (m - 1) // 2 for m in sizes)
            for kind in ("AA", "CC"):
                for idx in graph.edges_of_kind(kind):
                    edge = graph.edges[idx]
                    assert edge.ref.u.i == edge.ref.v.i

    def test_deterministic_ordering(self):
        group = make_group(3, 2, seed=5)
        one = dump_graph(build_graph(group, "CRF_all,f"))
        two = dump_graph(build_graph(group, "CRF_all,f"))
        assert one == two

    def test_one_to_one_pairs_matching_indices(self):
        graph = build_graph(make_group(2, 3), "CRF_AC")
        for idx in graph.edges_of_kind("AC"):
            edge = graph.edges[idx]
            assert edge.ref.u.i == edge.ref.v.i
            assert edge.ref.u.m == edge.ref.v.m

    def test_labels_attached(self):
        group = make_group(2, 2, with_labels=True)
        graph = build_graph(group, "null")
        assert all(node.gold in (0, 1) for node in graph.nodes)
        assert len(graph.edges) == 0

    def test_missing_threads_rejected(self):
        empty = GroupEmbeddings(a_vectors=[], b_vectors=[], c_vectors=[])
        with pytest.raises(ValueError):
            build_graph(empty, "null")


class TestEdgeFeatures:
    def test_bias_only(self):
        assert np.array_equal(edge_features([1.0, 2.0], [3.0], "bias_only"), [1.0])

    def test_self_cosine(self):
        mu = edge_features([1.0, 2.0], [1.0, 2.0])
        assert np.allclose(mu, [1.0, 1.0])

    def test_orthogonal(self):
        mu = edge_features([1.0, 0.0], [0.0, 1.0])
        assert np.allclose(mu, [1.0, 0.0])

    def test_zero_vector_total(self):
        mu = edge_features([0.0, 0.0], [1.0, 1.0])
        assert np.allclose(mu, [1.0, 0.0])

    def test_unequal_lengths_zero_padded(self):
        mu = edge_features([1.0, 0.0, 5.0], [1.0, 0.0])
        expected = np.dot([1.0, 0.0, 5.0], [1.0, 0.0, 0.0]) / (np.sqrt(26.0) * 1.0)
        assert mu[1] == pytest.approx(expected)


class TestDump:
    def test_one_line_per_element(self):
        graph = build_graph(make_group(2, 2), "CRF_ACBC")
        text = dump_graph(graph)
        lines = text.strip().split("\n")
        assert len(lines) == graph.n_nodes + len(graph.edges)
        assert lines[0].startswith("node A(1,1)")
        assert any(line.startswith("edge AC") for line in lines)

    def test_golden_topology_dump(self):
        group = GroupEmbeddings(
            a_vectors=[[np.array([1.0, 0.0])], [np.array([0.0, 1.0])]],
            b_vectors=[np.array([1.0, 1.0]), np.array([1.0, -1.0])],
            c_vectors=[[np.array([2.0, 0.0])], [np.array([0.0, 2.0])]],
            a_labels=[[1], [0]],
            b_labels=[1, 0],
            c_labels=[[1], [0]],
        )
        expected = (
            "node A(1,1) dim=2 gold=1\n"
            "node A(2,1) dim=2 gold=0\n"
            "node B(1) dim=2 gold=1\n"
            "node B(2) dim=2 gold=0\n"
            "node C(1,1) dim=2 gold=1\n"
            "node C(2,1) dim=2 gold=0\n"
            "edge AC A(1,1)-C(1,1) mu=[1.000000 1.000000]\n"
            "edge AC A(2,1)-C(2,1) mu=[1.000000 1.000000]\n"
            "edge BC B(1)-C(1,1) mu=[1.000000 0.707107]\n"
            "edge BC B(2)-C(2,1) mu=[1.000000 -0.707107]\n"
        )
        assert dump_graph(build_graph(group, "CRF_ACBC")) == expected


class TestFactorGraphContainer:
    def test_duplicate_node_rejected(self):
        node = GraphNode(NodeRef("A", 1, 1), np.zeros(2))
        with pytest.raises(ValueError):
            FactorGraph(nodes=[node, GraphNode(NodeRef("A", 1, 1), np.zeros(2))], edges=[])

    def test_duplicate_edge_rejected(self):
        nodes = [GraphNode(NodeRef("A", 1, 1), np.zeros(2)),
                 GraphNode(NodeRef("C", 1, 1), np.zeros(2))]
        edge = GraphEdge(make_edge(nodes[0].ref, nodes[1].ref), 0, 1, np.array([1.0]))
        dup = GraphEdge(make_edge(nodes[0].ref, nodes[1].ref), 0, 1, np.array([1.0]))
        with pytest.raises(ValueError):
            FactorGraph(nodes=nodes, edges=[edge, dup])

    def test_adjacency_consistent(self):
        graph = build_graph(make_group(2, 3, seed=1), "CRF_all")
        for pos, edge in enumerate(graph.edges):
            assert (pos, edge.v_index) in graph.adjacency[edge.u_index]
            assert (pos, edge.u_index) in graph.adjacency[edge.v_index]
        assert sum(graph.degree(u) for u in range(graph.n_nodes)) == 2 * len(graph.edges)

"""Multitask graph construction over one question group.

Nodes are the per-comment goodness (A), per-thread relatedness (B), and
per-comment relevance (C) variables; edges follow a topology config with
intra-subtask families (AA, BB, CC) and across-subtask families (AC 1:1,
BC and AB M:1). AA and CC edges never cross threads. Construction is
pure and deterministic: nodes are ordered A block, B block, C block
(threads in retrieval order, comments in chronological order) and edges
by family then endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import cosine

EDGE_KINDS = ("AA", "BB", "CC", "AC", "BC", "AB")

#: Edge-state order shared with the CRF: (y_u, y_v) for the endpoint
#: whose task letter sorts first, i.e. state index = 2*y_u + y_v.
EDGE_STATES = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True, order=True)
class NodeRef:
    """Typed node id: task letter, 1-based thread index i, and for A/C
    nodes the 1-based comment index m (None for B nodes)."""

    task: str
    i: int
    m: int | None = None

    def __post_init__(self):
        if self.task not in ("A", "B", "C"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "B" and self.m is not None:
            raise ValueError("B nodes carry no comment index")
        if self.task in ("A", "C") and self.m is None:
            raise ValueError(f"{self.task} nodes need a comment index")

    def __str__(self):
        return f"{self.task}({self.i})" if self.m is None else f"{self.task}({self.i},{self.m})"


@dataclass(frozen=True)
class EdgeRef:
    kind: str
    u: NodeRef
    v: NodeRef

    def __post_init__(self):
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {self.kind!r}")
        if self.u == self.v:
            raise ValueError("self loops are not allowed")
        if self.u.task + self.v.task != self.kind:
            raise ValueError(
                f"edge kind {self.kind} does not match endpoint tasks "
                f"{self.u.task}{self.v.task}")
        if self.kind in ("AA", "CC") and self.u.i != self.v.i:
            raise ValueError(f"{self.kind} edges must stay within one thread")


def make_edge(a: NodeRef, b: NodeRef) -> EdgeRef:
    """Canonical edge: endpoints ordered so the kind reads A<=B<=C."""
    u, v = sorted((a, b))
    return EdgeRef(u.task + v.task, u, v)


@dataclass(frozen=True)
class TopologyConfig:
    """Which edge families to build.

    intra_* is "null" or "full" (full AA/CC stays within a thread);
    across_ac is "null" or "one_to_one"; across_bc and across_ab are
    "null" or "many_to_one".
    """

    intra_a: str = "null"
    intra_b: str = "null"
    intra_c: str = "null"
    across_ac: str = "null"
    across_bc: str = "null"
    across_ab: str = "null"

    def __post_init__(self):
        for name in ("intra_a", "intra_b", "intra_c"):
            if getattr(self, name) not in ("null", "full"):
                raise ValueError(f"{name} must be null or full")
        if self.across_ac not in ("null", "one_to_one"):
            raise ValueError("across_ac must be null or one_to_one")
        for name in ("across_bc", "across_ab"):
            if getattr(self, name) not in ("null", "many_to_one"):
                raise ValueError(f"{name} must be null or many_to_one")


def _preset(ac=False, bc=False, ab=False, a=False, b=False, c=False) -> TopologyConfig:
    return TopologyConfig(
        intra_a="full" if a else "null",
        intra_b="full" if b else "null",
        intra_c="full" if c else "null",
        across_ac="one_to_one" if ac else "null",
        across_bc="many_to_one" if bc else "null",
        across_ab="many_to_one" if ab else "null",
    )


TOPOLOGY_PRESETS: dict[str, TopologyConfig] = {
    "null": _preset(),
    "CRF_AC": _preset(ac=True),
    "CRF_BC": _preset(bc=True),
    "CRF_ACBC": _preset(ac=True, bc=True),
    "CRF_all": _preset(ac=True, bc=True, ab=True),
    "CRF_Bf": _preset(b=True),
    "CRF_ACBC,Cf": _preset(ac=True, bc=True, c=True),
    "CRF_ACBC,AfCf": _preset(ac=True, bc=True, a=True, c=True),
    "CRF_ACBC,BfCf": _preset(ac=True, bc=True, b=True, c=True),
    "CRF_ACBC,Bf": _preset(ac=True, bc=True, b=True),
    "CRF_ACBC,AfBf": _preset(ac=True, bc=True, a=True, b=True),
    "CRF_ACBC,f": _preset(ac=True, bc=True, a=True, b=True, c=True),
    "CRF_all,f": _preset(ac=True, bc=True, ab=True, a=True, b=True, c=True),
}


def resolve_topology(name_or_config: "str | TopologyConfig") -> TopologyConfig:
    """Look up a preset name ("^" markers are ignored, so CRF_ACBC,B^f
    and CRF_ACBC,Bf are the same preset)."""
    if isinstance(name_or_config, TopologyConfig):
        return name_or_config
    key = name_or_config.replace("^", "")
    if key not in TOPOLOGY_PRESETS:
        known = ", ".join(sorted(TOPOLOGY_PRESETS))
        raise KeyError(f"unknown topology preset {name_or_config!r}; known presets: {known}")
    return TOPOLOGY_PRESETS[key]


@dataclass
class GraphNode:
    ref: NodeRef
    embedding: np.ndarray
    gold: int | None = None


@dataclass
class GraphEdge:
    ref: EdgeRef
    u_index: int
    v_index: int
    mu: np.ndarray


@dataclass
class FactorGraph:
    """Immutable-after-construction container for nodes and typed edges."""

    nodes: list[GraphNode]
    edges: list[GraphEdge]
    index: dict[NodeRef, int] = field(init=False)
    adjacency: list[list[tuple[int, int]]] = field(init=False)  # per node: (edge idx, neighbor idx)

    def __post_init__(self):
        self.index = {}
        for pos, node in enumerate(self.nodes):
            if node.ref in self.index:
                raise ValueError(f"duplicate node {node.ref}")
            self.index[node.ref] = pos
        seen = set()
        self.adjacency = [[] for _ in self.nodes]
        for pos, edge in enumerate(self.edges):
            key = (edge.u_index, edge.v_index)
            if key in seen or (key[1], key[0]) in seen:
                raise ValueError(f"duplicate edge between {key}")
            seen.add(key)
            self.adjacency[edge.u_index].append((pos, edge.v_index))
            self.adjacency[edge.v_index].append((pos, edge.u_index))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def nodes_of_task(self, task: str) -> list[int]:
        return [i for i, node in enumerate(self.nodes) if node.ref.task == task]

    def edges_of_kind(self, kind: str) -> list[int]:
        return [i for i, edge in enumerate(self.edges) if edge.ref.kind == kind]

    def degree(self, node_index: int) -> int:
        return len(self.adjacency[node_index])


@dataclass
class GroupEmbeddings:
    """Per-node inputs for one question group, ragged across threads.

    b_vectors[i] is thread i's B-node embedding; a_vectors[i][m] and
    c_vectors[i][m] the comment-level embeddings (0-based lists, 1-based
    ranks in the graph). Labels are optional parallel structures.
    """

    a_vectors: list[list[np.ndarray]]
    b_vectors: list[np.ndarray]
    c_vectors: list[list[np.ndarray]]
    a_labels: list[list[int]] | None = None
    b_labels: list[int] | None = None
    c_labels: list[list[int]] | None = None

    @property
    def n_threads(self) -> int:
        return len(self.b_vectors)

    def comments_in_thread(self, i: int) -> int:
        return len(self.a_vectors[i])


def edge_features(x_u: np.ndarray, x_v: np.ndarray, mode: str = "bias_plus_cosine") -> np.ndarray:
    """Edge input vector mu(x_u, x_v).

    bias_only gives [1]; bias_plus_cosine gives [1, cos(x_u, x_v)] where
    vectors of unequal length are zero-extended to match, and a zero
    vector has cosine 0 by convention.
    """
    if mode == "bias_only":
        return np.array([1.0])
    if mode != "bias_plus_cosine":
        raise ValueError(f"unknown edge feature mode {mode!r}")
    u = np.asarray(x_u, dtype=float)
    v = np.asarray(x_v, dtype=float)
    if u.shape[0] != v.shape[0]:
        width = max(u.shape[0], v.shape[0])
        u = np.pad(u, (0, width - u.shape[0]))
        v = np.pad(v, (0, width - v.shape[0]))
    return np.array([1.0, cosine(u, v)])


def edge_feature_width(mode: str) -> int:
    return 1 if mode == "bias_only" else 2


def build_graph(group: GroupEmbeddings, topo: "str | TopologyConfig",
                edge_feature_mode: str = "bias_plus_cosine") -> FactorGraph:
    """Construct the factor graph licensed by the topology.

    One A and one C node per comment, one B node per thread; 1:1 AC
    edges pair same-(i,m) nodes, M:1 BC/AB edges connect every comment
    node of a thread to its B node, full intra families connect all node
    pairs (within a thread for AA/CC, across the group for BB).
    """
    topo = resolve_topology(topo)
    if group.n_threads < 1:
        raise ValueError("a group needs at least one thread")

    def label(labels, *pos):
        if labels is None:
            return None
        value = labels
        for p in pos:
            value = value[p]
        return int(value)

    nodes: list[GraphNode] = []
    for i in range(group.n_threads):
        for m in range(group.comments_in_thread(i)):
            nodes.append(GraphNode(NodeRef("A", i + 1, m + 1),
                                   np.asarray(group.a_vectors[i][m], dtype=float),
                                   label(group.a_labels, i, m)))
    for i in range(group.n_threads):
        nodes.append(GraphNode(NodeRef("B", i + 1),
                               np.asarray(group.b_vectors[i], dtype=float),
                               label(group.b_labels, i)))
    for i in range(group.n_threads):
        for m in range(group.comments_in_thread(i)):
            nodes.append(GraphNode(NodeRef("C", i + 1, m + 1),
                                   np.asarray(group.c_vectors[i][m], dtype=float),
                                   label(group.c_labels, i, m)))
    by_ref = {node.ref: node for node in nodes}

    pairs: list[tuple[NodeRef, NodeRef]] = []
    for i in range(1, group.n_threads + 1):
        n_comments = group.comments_in_thread(i - 1)
        if topo.across_ac == "one_to_one":
            pairs += [(NodeRef("A", i, m), NodeRef("C", i, m))
                      for m in range(1, n_comments + 1)]
        if topo.across_bc == "many_to_one":
            pairs += [(NodeRef("B", i), NodeRef("C", i, m))
                      for m in range(1, n_comments + 1)]
        if topo.across_ab == "many_to_one":
            pairs += [(NodeRef("A", i, m), NodeRef("B", i))
                      for m in range(1, n_comments + 1)]
        if topo.intra_a == "full":
            pairs += [(NodeRef("A", i, m), NodeRef("A", i, k))
                      for m in range(1, n_comments + 1)
                      for k in range(m + 1, n_comments + 1)]
        if topo.intra_c == "full":
            pairs += [(NodeRef("C", i, m), NodeRef("C", i, k))
                      for m in range(1, n_comments + 1)
                      for k in range(m + 1, n_comments + 1)]
    if topo.intra_b == "full":
        pairs += [(NodeRef("B", i), NodeRef("B", j))
                  for i in range(1, group.n_threads + 1)
                  for j in range(i + 1, group.n_threads + 1)]

    edges = [GraphEdge(ref=make_edge(a, b), u_index=0, v_index=0, mu=np.zeros(0))
             for a, b in pairs]
    # deterministic family-then-endpoint order
    edges.sort(key=lambda e: (EDGE_KINDS.index(e.ref.kind), e.ref.u, e.ref.v))
    index = {ref: pos for pos, ref in enumerate(by_ref)}
    finished = []
    for edge in edges:
        u, v = edge.ref.u, edge.ref.v
        mu = edge_features(by_ref[u].embedding, by_ref[v].embedding, edge_feature_mode)
        finished.append(GraphEdge(edge.ref, index[u], index[v], mu))
    return FactorGraph(nodes=nodes, edges=finished)


def dump_graph(graph: FactorGraph) -> str:
    """Line-oriented debug dump: one node or edge per line."""
    lines = []
    for node in graph.nodes:
        gold = "?" if node.gold is None else str(node.gold)
        lines.append(f"node {node.ref} dim={node.embedding.shape[0]} gold={gold}")
    for edge in graph.edges:
        mu = " ".join(f"{v:.6f}" for v in edge.mu)
        lines.append(f"edge {edge.ref.kind} {edge.ref.u}-{edge.ref.v} mu=[{mu}]")
    return "\n".join(lines) + "\n"

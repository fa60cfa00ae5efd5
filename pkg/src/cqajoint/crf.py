"""Globally normalized pairwise CRF over factor graphs.

Potentials are log-linear: each node u of task t contributes
exp(w_n^t . [x_u, 1]) when labeled 1 and exp(0) when labeled 0 (the
negative class is pinned so a zero-edge CRF reproduces the task
networks' sigmoid outputs exactly); each edge contributes
exp(w_e^kind[state] . mu) where state indexes the endpoint label pair
in the fixed order (0,0), (0,1), (1,0), (1,1).

Inference is sum-product message passing in log space (exact on trees,
approximate on loopy graphs, partition function from the Bethe free
energy) with an enumeration oracle for small graphs. Training minimizes
the negative log-likelihood whose gradient is the classic expected
minus observed feature vector, one RMSprop step per graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, xlogy

from .factorgraph import EDGE_KINDS, EDGE_STATES, FactorGraph, NodeRef
from .nn import RmspropConfig, TaskNetwork, rmsprop_step


def state_index(y_u: int, y_v: int) -> int:
    return 2 * y_u + y_v


@dataclass
class CrfParameters:
    """Positive-class node weights per task over [x_u, 1] and per-kind
    edge weight matrices of shape (4 states, |mu|)."""

    node_weights: dict[str, np.ndarray]
    edge_weights: dict[str, np.ndarray]

    def __post_init__(self):
        for task, w in self.node_weights.items():
            w = np.asarray(w, dtype=float)
            self.node_weights[task] = w
            if w.ndim != 1 or not np.all(np.isfinite(w)):
                raise ValueError(f"bad node weights for task {task}")
        for kind, w in self.edge_weights.items():
            w = np.asarray(w, dtype=float)
            self.edge_weights[kind] = w
            if w.ndim != 2 or w.shape[0] != 4 or not np.all(np.isfinite(w)):
                raise ValueError(f"bad edge weights for kind {kind}")

    def copy(self) -> "CrfParameters":
        return CrfParameters(
            node_weights={t: w.copy() for t, w in self.node_weights.items()},
            edge_weights={k: w.copy() for k, w in self.edge_weights.items()},
        )


@dataclass(frozen=True)
class BpConfig:
    schedule: str = "synchronous"
    damping: float = 0.5
    tolerance: float = 1e-6
    max_iters: int = 200

    def __post_init__(self):
        if self.schedule not in ("synchronous", "sequential"):
            raise ValueError("schedule must be synchronous or sequential")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must be in [0, 1)")
        if self.tolerance <= 0.0 or self.max_iters < 1:
            raise ValueError("tolerance must be positive and max_iters >= 1")


@dataclass
class InferenceResult:
    node_marginals: np.ndarray   # (n, 2)
    edge_marginals: np.ndarray   # (|E|, 4) in EDGE_STATES order
    log_partition: float
    converged: bool
    iterations: int


def log_node_potential(task: str, label: int, x_u: np.ndarray, params: CrfParameters) -> float:
    """w_n^t . [x_u, 1] for label 1, 0 for label 0."""
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    if label == 0:
        return 0.0
    w = params.node_weights[task]
    x_u = np.asarray(x_u, dtype=float)
    if w.shape[0] != x_u.shape[0] + 1:
        raise ValueError(
            f"task {task}: weight width {w.shape[0]} does not match "
            f"embedding width {x_u.shape[0]} + 1")
    return float(w[:-1] @ x_u + w[-1])


def _potential_tables(graph: FactorGraph, params: CrfParameters):
    """(theta_node (n,2), theta_edge (|E|,2,2)) log-potential tables."""
    n = graph.n_nodes
    theta_node = np.zeros((n, 2))
    for idx, node in enumerate(graph.nodes):
        theta_node[idx, 1] = log_node_potential(node.ref.task, 1, node.embedding, params)
    theta_edge = np.zeros((len(graph.edges), 2, 2))
    for idx, edge in enumerate(graph.edges):
        w = params.edge_weights.get(edge.ref.kind)
        if w is None:
            continue  # absent kind behaves as zero weights
        if w.shape[1] != edge.mu.shape[0]:
            raise ValueError(
                f"edge kind {edge.ref.kind}: weight width {w.shape[1]} does not "
                f"match feature width {edge.mu.shape[0]}")
        theta_edge[idx] = (w @ edge.mu).reshape(2, 2)
    return theta_node, theta_edge


def brute_force_infer(graph: FactorGraph, params: CrfParameters) -> InferenceResult:
    """Exact marginals and log Z by enumerating all 2^n labelings.

    The enumeration oracle: independent of message passing, limited to
    20 binary nodes.
    """
    n = graph.n_nodes
    if n > 20:
        raise ValueError(f"graph too large for enumeration ({n} nodes)")
    theta_node, theta_edge = _potential_tables(graph, params)
    assignments = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1  # (2^n, n)
    log_w = assignments @ theta_node[:, 1]
    for idx, edge in enumerate(graph.edges):
        log_w = log_w + theta_edge[idx, assignments[:, edge.u_index], assignments[:, edge.v_index]]
    log_z = float(logsumexp(log_w))
    node_marginals = np.zeros((n, 2))
    for u in range(n):
        on = assignments[:, u] == 1
        p1 = float(np.exp(logsumexp(log_w[on]) - log_z)) if np.any(on) else 0.0
        node_marginals[u] = (1.0 - p1, p1)
    edge_marginals = np.zeros((len(graph.edges), 4))
    for idx, edge in enumerate(graph.edges):
        for s, (yu, yv) in enumerate(EDGE_STATES):
            mask = (assignments[:, edge.u_index] == yu) & (assignments[:, edge.v_index] == yv)
            edge_marginals[idx, s] = float(np.exp(logsumexp(log_w[mask]) - log_z))
    return InferenceResult(node_marginals, edge_marginals, log_z, True, 1)


def _incoming_sums(n: int, dst: np.ndarray, messages: np.ndarray) -> np.ndarray:
    sums = np.zeros((n, 2))
    np.add.at(sums, dst, messages)
    return sums


def bp_infer(graph: FactorGraph, params: CrfParameters,
             cfg: BpConfig | None = None) -> InferenceResult:
    """Sum-product belief propagation in log space.

    Messages are damped interpolations (log domain) normalized by max
    subtraction; convergence is the max absolute message change
    dropping below the tolerance. Non-convergence within max_iters is
    reported, never raised. The returned log partition is the Bethe
    estimate, exact whenever the graph is a forest.
    """
    cfg = cfg or BpConfig()
    n = graph.n_nodes
    theta_node, theta_edge = _potential_tables(graph, params)
    n_edges = len(graph.edges)
    if n_edges == 0:
        marg = np.exp(theta_node - logsumexp(theta_node, axis=1, keepdims=True))
        log_z = float(np.sum(logsumexp(theta_node, axis=1)))
        return InferenceResult(marg, np.zeros((0, 4)), log_z, True, 0)

    # directed edge d = 2e (u->v) and 2e+1 (v->u)
    src = np.empty(2 * n_edges, dtype=int)
    dst = np.empty(2 * n_edges, dtype=int)
    for e, edge in enumerate(graph.edges):
        src[2 * e], dst[2 * e] = edge.u_index, edge.v_index
        src[2 * e + 1], dst[2 * e + 1] = edge.v_index, edge.u_index
    rev = np.arange(2 * n_edges) ^ 1
    theta_dir = np.empty((2 * n_edges, 2, 2))
    theta_dir[0::2] = theta_edge
    theta_dir[1::2] = np.transpose(theta_edge, (0, 2, 1))

    messages = np.zeros((2 * n_edges, 2))
    converged = False
    iterations = 0
    for iteration in range(1, cfg.max_iters + 1):
        iterations = iteration
        if cfg.schedule == "synchronous":
            sums = _incoming_sums(n, dst, messages)
            pre = theta_node[src] + sums[src] - messages[rev]
            new = logsumexp(pre[:, :, None] + theta_dir, axis=1)
            new -= new.max(axis=1, keepdims=True)
            new = cfg.damping * messages + (1.0 - cfg.damping) * new
            delta = float(np.max(np.abs(new - messages)))
            messages = new
        else:
            sums = _incoming_sums(n, dst, messages)
            delta = 0.0
            for d in range(2 * n_edges):
                pre = theta_node[src[d]] + sums[src[d]] - messages[rev[d]]
                new = logsumexp(pre[:, None] + theta_dir[d], axis=0)
                new -= new.max()
                new = cfg.damping * messages[d] + (1.0 - cfg.damping) * new
                delta = max(delta, float(np.max(np.abs(new - messages[d]))))
                sums[dst[d]] += new - messages[d]
                messages[d] = new
        if delta < cfg.tolerance:
            converged = True
            break

    sums = _incoming_sums(n, dst, messages)
    log_beliefs = theta_node + sums
    log_norms = logsumexp(log_beliefs, axis=1, keepdims=True)
    node_marginals = np.exp(log_beliefs - log_norms)

    u_idx = src[0::2]
    v_idx = dst[0::2]
    q_u = theta_node[u_idx] + sums[u_idx] - messages[1::2]  # exclude msg v->u
    q_v = theta_node[v_idx] + sums[v_idx] - messages[0::2]  # exclude msg u->v
    log_pair = theta_edge + q_u[:, :, None] + q_v[:, None, :]
    log_pair = log_pair.reshape(n_edges, 4)
    edge_marginals = np.exp(log_pair - logsumexp(log_pair, axis=1, keepdims=True))

    log_z = _bethe_log_partition(graph, theta_node, theta_edge,
                                 node_marginals, edge_marginals)
    return InferenceResult(node_marginals, edge_marginals, log_z, converged, iterations)


def _bethe_log_partition(graph: FactorGraph, theta_node, theta_edge,
                         node_marginals, edge_marginals) -> float:
    """Bethe free-energy estimate of log Z from current beliefs."""
    avg_energy = float(np.sum(node_marginals * theta_node))
    avg_energy += float(np.sum(edge_marginals * theta_edge.reshape(-1, 4)))
    edge_entropy = -float(np.sum(xlogy(edge_marginals, edge_marginals)))
    node_self = np.sum(xlogy(node_marginals, node_marginals), axis=1)
    degrees = np.array([graph.degree(u) for u in range(graph.n_nodes)])
    node_entropy = float(np.sum((degrees - 1) * node_self))
    return avg_energy + edge_entropy + node_entropy


def infer(graph: FactorGraph, params: CrfParameters, inference: str = "bp",
          bp_cfg: BpConfig | None = None) -> InferenceResult:
    if inference == "exact":
        return brute_force_infer(graph, params)
    if inference == "bp":
        return bp_infer(graph, params, bp_cfg)
    raise ValueError(f"unknown inference mode {inference!r}")


@dataclass
class CrfGradients:
    node: dict[str, np.ndarray]
    edge: dict[str, np.ndarray]


def nll_and_grad(
    graphs: list[FactorGraph],
    params: CrfParameters,
    inference: str = "exact",
    l2_by_task: dict[str, float] | None = None,
    bp_cfg: BpConfig | None = None,
) -> tuple[float, CrfGradients]:
    """Negative log-likelihood of the gold labelings and its gradient.

    Node gradients accumulate (marginal - gold) * [x_u, 1] per task,
    edge gradients (edge marginal - gold-state indicator) * mu per kind;
    gold edge states derive from the two gold node labels. L2 applies to
    node weights only, excluding the bias coordinate.
    """
    l2_by_task = l2_by_task or {}
    node_grads = {t: np.zeros_like(w) for t, w in params.node_weights.items()}
    edge_grads = {k: np.zeros_like(w) for k, w in params.edge_weights.items()}
    loss = 0.0
    for graph in graphs:
        gold = np.array([-1 if node.gold is None else node.gold for node in graph.nodes])
        if np.any(gold < 0):
            raise ValueError("nll_and_grad requires a gold label on every node")
        theta_node, theta_edge = _potential_tables(graph, params)
        result = infer(graph, params, inference, bp_cfg)
        log_score = float(np.sum(theta_node[np.arange(graph.n_nodes), gold]))
        for idx, edge in enumerate(graph.edges):
            log_score += float(theta_edge[idx, gold[edge.u_index], gold[edge.v_index]])
        loss += result.log_partition - log_score
        for idx, node in enumerate(graph.nodes):
            feat = np.append(node.embedding, 1.0)
            node_grads[node.ref.task] += (result.node_marginals[idx, 1] - gold[idx]) * feat
        for idx, edge in enumerate(graph.edges):
            if edge.ref.kind not in edge_grads:
                continue
            expected = np.outer(result.edge_marginals[idx], edge.mu)
            observed = np.zeros_like(expected)
            observed[state_index(gold[edge.u_index], gold[edge.v_index])] = edge.mu
            edge_grads[edge.ref.kind] += expected - observed
    for task in sorted(l2_by_task):
        strength = l2_by_task[task]
        if task in params.node_weights and strength:
            w = params.node_weights[task]
            loss += strength * float(np.sum(w[:-1] ** 2))
            node_grads[task][:-1] += 2.0 * strength * w[:-1]
    return loss, CrfGradients(node_grads, edge_grads)


DEFAULT_CRF_L2 = {"A": 0.001, "B": 0.05, "C": 0.0001}


@dataclass(frozen=True)
class CrfTrainConfig:
    epochs: int = 10
    rmsprop: RmspropConfig = field(default_factory=RmspropConfig)
    l2_by_task: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CRF_L2))
    bp: BpConfig = field(default_factory=BpConfig)
    inference: str = "bp"
    seed: int = 0
    shuffle: bool = True


def initial_parameters(
    nets: dict[str, TaskNetwork],
    edge_kinds: list[str],
    edge_feature_width: int = 2,
) -> CrfParameters:
    """Node weights copied from the task networks' output layers
    ([w_t, bias_t] over [x_u, 1]), edge weights zero."""
    node_weights = {}
    for task, net in nets.items():
        w, b = net.output_weights
        node_weights[task] = np.append(np.asarray(w, dtype=float), float(b))
    edge_weights = {k: np.zeros((4, edge_feature_width)) for k in sorted(set(edge_kinds))}
    return CrfParameters(node_weights, edge_weights)


def train_crf(
    graphs: list[FactorGraph],
    nets: dict[str, TaskNetwork],
    cfg: CrfTrainConfig | None = None,
    edge_feature_width: int = 2,
    init: CrfParameters | None = None,
) -> tuple[CrfParameters, list[float]]:
    """Online RMSprop over per-graph NLL gradients.

    One update per question-group graph, graphs shuffled per epoch with
    the configured seed. Returns the parameters and a per-epoch mean
    NLL trace (loss measured as training proceeds).
    """
    cfg = cfg or CrfTrainConfig()
    kinds = sorted({edge.ref.kind for graph in graphs for edge in graph.edges})
    if init is not None:
        params = init.copy()
    else:
        for graph in graphs:
            for node in graph.nodes:
                task = node.ref.task
                if task not in nets:
                    raise ValueError(f"no trained network supplied for task {task}")
                expected = nets[task].spec.embedding_dim
                if node.embedding.shape[0] != expected:
                    raise ValueError(
                        f"node {node.ref}: embedding width {node.embedding.shape[0]} "
                        f"does not match task {task} network width {expected}")
        params = initial_parameters(nets, kinds, edge_feature_width)
    caches_node = {t: np.zeros_like(w) for t, w in params.node_weights.items()}
    caches_edge = {k: np.zeros_like(w) for k, w in params.edge_weights.items()}
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(graphs)) if cfg.shuffle else np.arange(len(graphs))
        epoch_loss = 0.0
        for g in order:
            loss, grads = nll_and_grad([graphs[g]], params, cfg.inference,
                                       cfg.l2_by_task, cfg.bp)
            epoch_loss += loss
            for task in sorted(params.node_weights):
                params.node_weights[task], caches_node[task] = rmsprop_step(
                    params.node_weights[task], grads.node[task],
                    caches_node[task], cfg.rmsprop)
            for kind in sorted(params.edge_weights):
                params.edge_weights[kind], caches_edge[kind] = rmsprop_step(
                    params.edge_weights[kind], grads.edge[kind],
                    caches_edge[kind], cfg.rmsprop)
        trace.append(epoch_loss / max(len(graphs), 1))
    return params, trace


def predict(graph: FactorGraph, params: CrfParameters,
            cfg: BpConfig | None = None, inference: str = "bp") -> dict[NodeRef, float]:
    """Positive-class marginal per node, the ranking score. Posterior
    decoding thresholds these at 0.5 for classification metrics."""
    result = infer(graph, params, inference, cfg)
    return {node.ref: float(result.node_marginals[idx, 1])
            for idx, node in enumerate(graph.nodes)}


def local_joint_baseline(p_a: float, p_b: float, p_c: float,
                         labels: tuple[int, int, int] = (1, 1, 1)) -> float:
    """Locally normalized product model p(y^a) p(y^b) p(y^c); the
    conditional-independence baseline."""
    for p in (p_a, p_b, p_c):
        if not 0.0 <= p <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
    factors = [(p if y == 1 else 1.0 - p)
               for p, y in zip((p_a, p_b, p_c), labels)]
    return factors[0] * factors[1] * factors[2]


# --- serialization ------------------------------------------------------

FORMAT_VERSION = 1


def parameters_to_state(params: CrfParameters) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "edge_states": [list(s) for s in EDGE_STATES],
        "node_weights": {t: w.tolist() for t, w in sorted(params.node_weights.items())},
        "edge_weights": {k: w.tolist() for k, w in sorted(params.edge_weights.items())},
    }


def parameters_from_state(state: dict) -> CrfParameters:
    if state.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported CRF format {state.get('format_version')!r}")
    return CrfParameters(
        node_weights={t: np.array(w, dtype=float)
                      for t, w in state["node_weights"].items()},
        edge_weights={k: np.array(w, dtype=float)
                      for k, w in state["edge_weights"].items()},
    )


def save_parameters(params: CrfParameters, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(parameters_to_state(params), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_parameters(path: str) -> CrfParameters:
    with open(path, "r", encoding="utf-8") as fh:
        return parameters_from_state(json.load(fh))


def dump_scores(scores: dict[NodeRef, float]) -> str:
    """Structured text dump: one "node_id<TAB>score" line per node."""
    lines = [f"{ref}\t{repr(score)}" for ref, score in sorted(scores.items())]
    return "\n".join(lines) + "\n"

"""From-scratch feed-forward networks for the three thread-classification
subtasks.

A network is driven entirely by its spec: named input slots feed named
interaction layers, whose ReLU activations join the pairwise similarity
vectors in a final task-specific hidden layer, and the concatenation of
that layer with the pairwise vectors forms both the task embedding and
the input of the sigmoid output unit. Training is minibatch RMSprop on
cross-entropy with L2 on weight matrices (biases excluded), inverted
dropout on hidden activations, and patience-based early stopping.

All arithmetic is float64 numpy; everything is deterministic given the
configured seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

TASKS = ("A", "B", "C")

DEFAULT_INTERACTION_DIMS = {"A": 10, "B": 5, "C": 15}
DEFAULT_TASK_LAYER_DIMS = {"A": 125, "B": 75, "C": 50}
DEFAULT_BATCH_SIZES = {"A": 16, "B": 25, "C": 32}
DEFAULT_DROPOUT = {"A": 0.3, "B": 0.2, "C": 0.3}
DEFAULT_L2 = {"A": 0.001, "B": 0.05, "C": 0.0001}


class ShapeError(ValueError):
    """An input or weight width does not match the network spec."""


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class InteractionBlock:
    """One hidden layer fed by a fixed tuple of input slots."""

    name: str
    inputs: tuple[str, ...]
    width: int


@dataclass(frozen=True)
class TaskNetworkSpec:
    task: str
    input_blocks: tuple[tuple[str, int], ...]     # (slot name, width)
    interactions: tuple[InteractionBlock, ...]
    pairwise_slots: tuple[tuple[str, int], ...]   # (slot name, width)
    task_layer_dim: int

    def __post_init__(self):
        if self.task_layer_dim <= 0:
            raise ValueError("task_layer_dim must be positive")
        input_names = {name for name, _ in self.input_blocks}
        for block in self.interactions:
            if block.width <= 0:
                raise ValueError(f"interaction {block.name!r} width must be positive")
            missing = [s for s in block.inputs if s not in input_names]
            if missing:
                raise ValueError(
                    f"interaction {block.name!r} references unknown inputs {missing}")

    @property
    def input_widths(self) -> dict[str, int]:
        return dict(self.input_blocks)

    @property
    def pairwise_widths(self) -> dict[str, int]:
        return dict(self.pairwise_slots)

    @property
    def pairwise_total(self) -> int:
        return sum(w for _, w in self.pairwise_slots)

    @property
    def interaction_total(self) -> int:
        return sum(b.width for b in self.interactions)

    @property
    def embedding_dim(self) -> int:
        """Length of the task embedding [h2, phi...]."""
        return self.task_layer_dim + self.pairwise_total

    def block_input_width(self, block: InteractionBlock) -> int:
        widths = self.input_widths
        return sum(widths[s] for s in block.inputs)


def standard_spec(
    task: str,
    input_widths: Mapping[str, int],
    pairwise_widths: Mapping[str, int],
    interaction_dims: Mapping[str, int] | None = None,
    task_layer_dim: int | None = None,
) -> TaskNetworkSpec:
    """Canonical per-subtask wiring.

    A: one interaction layer over (z_qi, z_c) and one pairwise slot
    phi_a. B: one layer over (z_q, z_qi) and phi_b. C: private copies of
    the A- and B-shaped layers plus its own layer over (z_q, z_c), and
    all three pairwise slots. Interaction widths default to 10/5/15 for
    the A/B/C-shaped layers and the task layer to 125/75/50.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    inter = dict(interaction_dims or {})
    dims = {
        "h1_a": inter.get("h1_a", DEFAULT_INTERACTION_DIMS["A"]),
        "h1_b": inter.get("h1_b", DEFAULT_INTERACTION_DIMS["B"]),
        "h1_c": inter.get("h1_c", DEFAULT_INTERACTION_DIMS["C"]),
    }
    task_dim = task_layer_dim or DEFAULT_TASK_LAYER_DIMS[task]

    def slot(name):
        if name not in input_widths:
            raise ValueError(f"task {task} spec needs input width for {name!r}")
        return (name, int(input_widths[name]))

    def phi(name):
        if name not in pairwise_widths:
            raise ValueError(f"task {task} spec needs pairwise width for {name!r}")
        return (name, int(pairwise_widths[name]))

    if task == "A":
        return TaskNetworkSpec(
            task="A",
            input_blocks=(slot("z_qi"), slot("z_c")),
            interactions=(InteractionBlock("h1_a", ("z_qi", "z_c"), dims["h1_a"]),),
            pairwise_slots=(phi("phi_a"),),
            task_layer_dim=task_dim,
        )
    if task == "B":
        return TaskNetworkSpec(
            task="B",
            input_blocks=(slot("z_q"), slot("z_qi")),
            interactions=(InteractionBlock("h1_b", ("z_q", "z_qi"), dims["h1_b"]),),
            pairwise_slots=(phi("phi_b"),),
            task_layer_dim=task_dim,
        )
    return TaskNetworkSpec(
        task="C",
        input_blocks=(slot("z_q"), slot("z_qi"), slot("z_c")),
        interactions=(
            InteractionBlock("h1_a", ("z_qi", "z_c"), dims["h1_a"]),
            InteractionBlock("h1_b", ("z_q", "z_qi"), dims["h1_b"]),
            InteractionBlock("h1_c", ("z_q", "z_c"), dims["h1_c"]),
        ),
        pairwise_slots=(phi("phi_a"), phi("phi_b"), phi("phi_c")),
        task_layer_dim=task_dim,
    )


def simple_spec(task: str, input_dim: int, hidden: int = 4,
                task_layer_dim: int = 8) -> TaskNetworkSpec:
    """Single-block spec for inline-feature datasets (synthetic mode)."""
    return TaskNetworkSpec(
        task=task,
        input_blocks=(("z", input_dim),),
        interactions=(InteractionBlock("h1", ("z",), hidden),),
        pairwise_slots=(("phi", input_dim),),
        task_layer_dim=task_layer_dim,
    )


@dataclass(frozen=True)
class RmspropConfig:
    learning_rate: float = 0.001
    decay_rho: float = 0.9
    epsilon: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.decay_rho < 1.0:
            raise ValueError("decay_rho must be in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    dropout_rate: float = 0.3
    l2_strength: float = 0.0001
    max_epochs: int = 100
    patience: int = 25
    rmsprop: RmspropConfig = field(default_factory=RmspropConfig)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.l2_strength < 0.0:
            raise ValueError("l2_strength must be nonnegative")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")


def default_train_config(task: str, seed: int = 0, **overrides) -> TrainConfig:
    """Per-task training defaults (batch 16/25/32, dropout .3/.2/.3,
    l2 1e-3/5e-2/1e-4 for A/B/C)."""
    base = dict(
        batch_size=DEFAULT_BATCH_SIZES[task],
        dropout_rate=DEFAULT_DROPOUT[task],
        l2_strength=DEFAULT_L2[task],
        seed=seed,
    )
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class TaskDataset:
    """Row-aligned feature matrices for one subtask.

    inputs and pairwise map slot names to (n, width) matrices; labels is
    a length-n 0/1 vector (may be omitted for prediction-only data).
    """

    inputs: dict[str, np.ndarray]
    pairwise: dict[str, np.ndarray]
    labels: np.ndarray | None = None

    def __post_init__(self):
        sizes = {m.shape[0] for m in self.inputs.values()}
        sizes |= {m.shape[0] for m in self.pairwise.values()}
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=float)
            sizes.add(self.labels.shape[0])
        if len(sizes) > 1:
            raise ShapeError(f"row counts disagree across slots: {sorted(sizes)}")

    @property
    def n(self) -> int:
        for m in self.inputs.values():
            return m.shape[0]
        for m in self.pairwise.values():
            return m.shape[0]
        return 0 if self.labels is None else self.labels.shape[0]

    def subset(self, idx: np.ndarray) -> "TaskDataset":
        return TaskDataset(
            inputs={k: v[idx] for k, v in self.inputs.items()},
            pairwise={k: v[idx] for k, v in self.pairwise.items()},
            labels=None if self.labels is None else self.labels[idx],
        )


@dataclass
class TaskNetwork:
    """Weights for one task network; immutable once trained."""

    spec: TaskNetworkSpec
    interaction_weights: dict[str, tuple[np.ndarray, np.ndarray]]  # name -> (W, b)
    task_weights: tuple[np.ndarray, np.ndarray]                    # (V, b)
    output_weights: tuple[np.ndarray, float]                       # (w, b)
    rng_seed: int = 0
    train_config: TrainConfig | None = None

    def validate(self) -> None:
        spec = self.spec
        for block in spec.interactions:
            W, b = self.interaction_weights[block.name]
            expected = (block.width, spec.block_input_width(block))
            if W.shape != expected or b.shape != (block.width,):
                raise ShapeError(
                    f"interaction {block.name!r}: weights {W.shape}, expected {expected}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"non-finite weights in block {block.name!r}")
        V, b2 = self.task_weights
        v_in = spec.interaction_total + spec.pairwise_total
        if V.shape != (spec.task_layer_dim, v_in) or b2.shape != (spec.task_layer_dim,):
            raise ShapeError(f"task layer: weights {V.shape}, expected {(spec.task_layer_dim, v_in)}")
        w, b = self.output_weights
        if w.shape != (spec.embedding_dim,):
            raise ShapeError(f"output layer: weights {w.shape}, expected {(spec.embedding_dim,)}")
        if not (np.all(np.isfinite(V)) and np.all(np.isfinite(b2))
                and np.all(np.isfinite(w)) and np.isfinite(b)):
            raise ValueError("non-finite weights in task or output layer")

    def copy(self) -> "TaskNetwork":
        return TaskNetwork(
            spec=self.spec,
            interaction_weights={k: (W.copy(), b.copy())
                                 for k, (W, b) in self.interaction_weights.items()},
            task_weights=(self.task_weights[0].copy(), self.task_weights[1].copy()),
            output_weights=(self.output_weights[0].copy(), float(self.output_weights[1])),
            rng_seed=self.rng_seed,
            train_config=self.train_config,
        )


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_network(spec: TaskNetworkSpec, seed: int = 0) -> TaskNetwork:
    """Glorot-uniform weights, zero biases; draw order fixed by the spec."""
    rng = np.random.default_rng(seed)
    interaction = {}
    for block in spec.interactions:
        fan_in = spec.block_input_width(block)
        interaction[block.name] = (_glorot(rng, block.width, fan_in), np.zeros(block.width))
    v_in = spec.interaction_total + spec.pairwise_total
    V = _glorot(rng, spec.task_layer_dim, v_in)
    w = _glorot(rng, 1, spec.embedding_dim)[0]
    return TaskNetwork(
        spec=spec,
        interaction_weights=interaction,
        task_weights=(V, np.zeros(spec.task_layer_dim)),
        output_weights=(w, 0.0),
        rng_seed=seed,
    )


def _check_batch(spec: TaskNetworkSpec, inputs: Mapping[str, np.ndarray],
                 pairwise: Mapping[str, np.ndarray]) -> int:
    n = None
    for name, width in spec.input_blocks:
        if name not in inputs:
            raise ShapeError(f"missing input block {name!r}")
        m = inputs[name]
        if m.ndim != 2 or m.shape[1] != width:
            raise ShapeError(
                f"input block {name!r}: got shape {m.shape}, expected (*, {width})")
        n = m.shape[0] if n is None else n
        if m.shape[0] != n:
            raise ShapeError(f"input block {name!r}: inconsistent row count")
    for name, width in spec.pairwise_slots:
        if name not in pairwise:
            raise ShapeError(f"missing pairwise slot {name!r}")
        m = pairwise[name]
        if m.ndim != 2 or m.shape[1] != width or (n is not None and m.shape[0] != n):
            raise ShapeError(
                f"pairwise slot {name!r}: got shape {m.shape}, expected ({n}, {width})")
        n = m.shape[0] if n is None else n
    return 0 if n is None else n


def _forward_batch(net: TaskNetwork, inputs, pairwise, dropout=0.0, rng=None):
    """Returns (probabilities, h2, cache-for-backprop)."""
    spec = net.spec
    n = _check_batch(spec, inputs, pairwise)
    cache = {"x_in": {}, "pre1": {}, "h1": {}, "mask1": {}}
    h1_cols = []
    for block in spec.interactions:
        x_in = np.concatenate([np.asarray(inputs[s], dtype=float) for s in block.inputs], axis=1)
        W, b = net.interaction_weights[block.name]
        pre = x_in @ W.T + b
        h1 = np.maximum(pre, 0.0)
        if dropout > 0.0:
            mask = (rng.random(h1.shape) >= dropout) / (1.0 - dropout)
            h1 = h1 * mask
        else:
            mask = None
        cache["x_in"][block.name] = x_in
        cache["pre1"][block.name] = pre
        cache["h1"][block.name] = h1
        cache["mask1"][block.name] = mask
        h1_cols.append(h1)
    phi = (np.concatenate([np.asarray(pairwise[s], dtype=float) for s, _ in spec.pairwise_slots], axis=1)
           if spec.pairwise_slots else np.zeros((n, 0)))
    v_in = np.concatenate(h1_cols + [phi], axis=1) if h1_cols else phi
    V, b2 = net.task_weights
    pre2 = v_in @ V.T + b2
    h2 = np.maximum(pre2, 0.0)
    if dropout > 0.0:
        mask2 = (rng.random(h2.shape) >= dropout) / (1.0 - dropout)
        h2 = h2 * mask2
    else:
        mask2 = None
    x = np.concatenate([h2, phi], axis=1)
    w, b_out = net.output_weights
    logits = x @ w + b_out
    probs = _sigmoid(logits)
    cache.update(v_in=v_in, pre2=pre2, h2=h2, mask2=mask2, phi=phi, x=x, logits=logits)
    return probs, h2, cache


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # probabilities stay strictly inside (0, 1); losses use logits anyway
    return np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean sigmoid cross-entropy computed from logits (stable)."""
    z, y = logits, labels
    return float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def forward(net: TaskNetwork, inputs: Mapping[str, np.ndarray],
            pairwise: Mapping[str, np.ndarray], mode: str = "infer",
            dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Single-instance forward pass; returns (probability, h2 vector).

    Inputs are 1-d slot vectors. Inference mode is deterministic; train
    mode applies inverted dropout to hidden activations and needs `rng`.
    """
    batch_inputs = {k: np.asarray(v, dtype=float).reshape(1, -1) for k, v in inputs.items()}
    batch_pairwise = {k: np.asarray(v, dtype=float).reshape(1, -1) for k, v in pairwise.items()}
    if mode == "infer":
        dropout = 0.0
    elif mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if dropout > 0.0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    probs, h2, _ = _forward_batch(net, batch_inputs, batch_pairwise, dropout, rng)
    return float(probs[0]), h2[0]


def predict_proba(net: TaskNetwork, data: TaskDataset) -> np.ndarray:
    probs, _, _ = _forward_batch(net, data.inputs, data.pairwise)
    return probs


def extract_task_embedding(net: TaskNetwork, inputs: Mapping[str, np.ndarray],
                           pairwise: Mapping[str, np.ndarray]) -> np.ndarray:
    """Deterministic [h2, phi...] embedding for one instance."""
    batch_inputs = {k: np.asarray(v, dtype=float).reshape(1, -1) for k, v in inputs.items()}
    batch_pairwise = {k: np.asarray(v, dtype=float).reshape(1, -1) for k, v in pairwise.items()}
    _, _, cache = _forward_batch(net, batch_inputs, batch_pairwise)
    return cache["x"][0]


def extract_embeddings(net: TaskNetwork, data: TaskDataset) -> np.ndarray:
    """Batch variant of extract_task_embedding: (n, embedding_dim)."""
    _, _, cache = _forward_batch(net, data.inputs, data.pairwise)
    return cache["x"]


def loss_and_grads(net: TaskNetwork, data: TaskDataset, l2: float,
                   dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Regularized mean cross-entropy and its gradients.

    Returns (loss, grads) with grads keyed like the parameter tree:
    ("interaction", name, "W"|"b"), ("task", "W"|"b"), ("out", "w"|"b").
    L2 covers weight matrices only, never biases.
    """
    if data.labels is None:
        raise ValueError("loss requires labels")
    y = data.labels
    n = data.n
    probs, _, cache = _forward_batch(net, data.inputs, data.pairwise, dropout, rng)
    ce = _cross_entropy(cache["logits"], y)
    w, _ = net.output_weights
    V, _ = net.task_weights
    penalty = float(np.sum(w * w)) + float(np.sum(V * V))
    for block in net.spec.interactions:
        W, _ = net.interaction_weights[block.name]
        penalty += float(np.sum(W * W))
    loss = ce + l2 * penalty

    dlogits = (probs - y) / n
    grads = {}
    grads[("out", "w")] = cache["x"].T @ dlogits + 2.0 * l2 * w
    grads[("out", "b")] = float(np.sum(dlogits))
    dx = np.outer(dlogits, w)
    dh2 = dx[:, : net.spec.task_layer_dim]
    if cache["mask2"] is not None:
        dh2 = dh2 * cache["mask2"]
    dpre2 = dh2 * (cache["pre2"] > 0.0)
    grads[("task", "W")] = dpre2.T @ cache["v_in"] + 2.0 * l2 * V
    grads[("task", "b")] = dpre2.sum(axis=0)
    dv_in = dpre2 @ V
    offset = 0
    for block in net.spec.interactions:
        dh1 = dv_in[:, offset:offset + block.width]
        offset += block.width
        mask = cache["mask1"][block.name]
        if mask is not None:
            dh1 = dh1 * mask
        dpre1 = dh1 * (cache["pre1"][block.name] > 0.0)
        W, _ = net.interaction_weights[block.name]
        grads[("interaction", block.name, "W")] = dpre1.T @ cache["x_in"][block.name] + 2.0 * l2 * W
        grads[("interaction", block.name, "b")] = dpre1.sum(axis=0)
    return loss, grads


def _param_items(net: TaskNetwork):
    for block in net.spec.interactions:
        W, b = net.interaction_weights[block.name]
        yield ("interaction", block.name, "W"), W
        yield ("interaction", block.name, "b"), b
    V, b2 = net.task_weights
    yield ("task", "W"), V
    yield ("task", "b"), b2
    w, b = net.output_weights
    yield ("out", "w"), w
    yield ("out", "b"), b


def _set_param(net: TaskNetwork, key, value):
    if key[0] == "interaction":
        W, b = net.interaction_weights[key[1]]
        net.interaction_weights[key[1]] = (value, b) if key[2] == "W" else (W, value)
    elif key[0] == "task":
        V, b2 = net.task_weights
        net.task_weights = (value, b2) if key[1] == "W" else (V, value)
    else:
        w, b = net.output_weights
        net.output_weights = (value, b) if key[1] == "w" else (w, float(value))


def rmsprop_step(param: np.ndarray, grad: np.ndarray, cache: np.ndarray,
                 hyper: RmspropConfig) -> tuple[np.ndarray, np.ndarray]:
    """One elementwise RMSprop update; rejects non-finite gradients."""
    param = np.asarray(param, dtype=float)
    grad = np.asarray(grad, dtype=float)
    cache = np.asarray(cache, dtype=float)
    if param.shape != grad.shape or param.shape != cache.shape:
        raise ShapeError("rmsprop_step: param/grad/cache shapes differ")
    if not np.all(np.isfinite(grad)):
        raise ValueError("rmsprop_step: non-finite gradient")
    new_cache = hyper.decay_rho * cache + (1.0 - hyper.decay_rho) * grad * grad
    new_param = param - hyper.learning_rate * grad / (np.sqrt(new_cache) + hyper.epsilon)
    return new_param, new_cache


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    validation_loss: float


@dataclass
class TrainTrace:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_validation_loss: float = float("inf")
    stopped_early: bool = False


def train_dnn(
    data: TaskDataset,
    spec: TaskNetworkSpec,
    cfg: TrainConfig,
    validation: TaskDataset | None = None,
    optimizer: str = "rmsprop",
) -> tuple[TaskNetwork, TrainTrace]:
    """Train a task network; returns the best-validation-loss snapshot.

    Without an explicit validation set, a seed-deterministic 10% split
    is carved from the data; datasets too small to spare a row fall back
    to monitoring the training loss itself. `optimizer` may be "sgd"
    (plain full-gradient steps at the RMSprop learning rate, intended
    for tests).
    """
    if data.n == 0:
        raise ValueError("empty dataset")
    if data.labels is None or not np.all(np.isin(data.labels, (0.0, 1.0))):
        raise ValueError("labels must be binary 0/1")
    if optimizer not in ("rmsprop", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")

    rng = np.random.default_rng(cfg.seed)
    if validation is None:
        n_val = int(0.1 * data.n)
        if n_val >= 1:
            perm = rng.permutation(data.n)
            validation = data.subset(perm[:n_val])
            train = data.subset(perm[n_val:])
        else:
            train = data
            validation = None
    else:
        train = data

    net = init_network(spec, seed=cfg.seed)
    caches = {key: np.zeros_like(np.asarray(val, dtype=float))
              for key, val in _param_items(net)}

    def eval_losses():
        train_loss, _ = loss_and_grads(net, train, cfg.l2_strength)
        if validation is not None and validation.n > 0:
            v_probs, _, v_cache = _forward_batch(net, validation.inputs, validation.pairwise)
            val_loss = _cross_entropy(v_cache["logits"], validation.labels)
        else:
            val_loss = train_loss
        return train_loss, val_loss

    trace = TrainTrace()
    best = net.copy()
    bad_epochs = 0
    n_train = train.n
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            batch = train.subset(order[start:start + cfg.batch_size])
            _, grads = loss_and_grads(net, batch, cfg.l2_strength,
                                      dropout=cfg.dropout_rate, rng=rng)
            for key, param in list(_param_items(net)):
                grad = np.asarray(grads[key], dtype=float)
                if optimizer == "rmsprop":
                    new_param, caches[key] = rmsprop_step(param, grad, caches[key], cfg.rmsprop)
                else:
                    new_param = np.asarray(param, dtype=float) - cfg.rmsprop.learning_rate * grad
                _set_param(net, key, new_param)
        train_loss, val_loss = eval_losses()
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        trace.epochs.append(EpochRecord(epoch, train_loss, val_loss))
        if val_loss < trace.best_validation_loss:
            trace.best_validation_loss = val_loss
            trace.best_epoch = epoch
            best = net.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                trace.stopped_early = True
                break
    best.train_config = cfg
    best.rng_seed = cfg.seed
    return best, trace


# --- serialization ------------------------------------------------------

FORMAT_VERSION = 1


def _spec_to_state(spec: TaskNetworkSpec) -> dict:
    return {
        "task": spec.task,
        "input_blocks": [[n, w] for n, w in spec.input_blocks],
        "interactions": [[b.name, list(b.inputs), b.width] for b in spec.interactions],
        "pairwise_slots": [[n, w] for n, w in spec.pairwise_slots],
        "task_layer_dim": spec.task_layer_dim,
    }


def _spec_from_state(state: dict) -> TaskNetworkSpec:
    return TaskNetworkSpec(
        task=state["task"],
        input_blocks=tuple((n, w) for n, w in state["input_blocks"]),
        interactions=tuple(InteractionBlock(n, tuple(i), w)
                           for n, i, w in state["interactions"]),
        pairwise_slots=tuple((n, w) for n, w in state["pairwise_slots"]),
        task_layer_dim=state["task_layer_dim"],
    )


def _train_config_to_state(cfg: TrainConfig | None) -> dict | None:
    if cfg is None:
        return None
    return {
        "batch_size": cfg.batch_size,
        "dropout_rate": cfg.dropout_rate,
        "l2_strength": cfg.l2_strength,
        "max_epochs": cfg.max_epochs,
        "patience": cfg.patience,
        "rmsprop": {
            "learning_rate": cfg.rmsprop.learning_rate,
            "decay_rho": cfg.rmsprop.decay_rho,
            "epsilon": cfg.rmsprop.epsilon,
        },
        "seed": cfg.seed,
    }


def _train_config_from_state(state: dict | None) -> TrainConfig | None:
    if state is None:
        return None
    rms = state.pop("rmsprop")
    return TrainConfig(rmsprop=RmspropConfig(**rms), **state)


def network_to_state(net: TaskNetwork) -> dict:
    """JSON-serializable snapshot; float lists round-trip bit-exactly."""
    return {
        "format_version": FORMAT_VERSION,
        "spec": _spec_to_state(net.spec),
        "rng_seed": net.rng_seed,
        "train_config": _train_config_to_state(net.train_config),
        "weights": {
            "interaction": {
                name: {"W": W.tolist(), "b": b.tolist()}
                for name, (W, b) in sorted(net.interaction_weights.items())
            },
            "task": {"W": net.task_weights[0].tolist(), "b": net.task_weights[1].tolist()},
            "out": {"w": net.output_weights[0].tolist(), "b": net.output_weights[1]},
        },
    }


def network_from_state(state: dict) -> TaskNetwork:
    if state.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported network format {state.get('format_version')!r}")
    spec = _spec_from_state(state["spec"])
    weights = state["weights"]
    net = TaskNetwork(
        spec=spec,
        interaction_weights={
            name: (np.array(entry["W"], dtype=float), np.array(entry["b"], dtype=float))
            for name, entry in weights["interaction"].items()
        },
        task_weights=(np.array(weights["task"]["W"], dtype=float),
                      np.array(weights["task"]["b"], dtype=float)),
        output_weights=(np.array(weights["out"]["w"], dtype=float),
                        float(weights["out"]["b"])),
        rng_seed=state["rng_seed"],
        train_config=_train_config_from_state(state["train_config"]),
    )
    net.validate()
    return net


def save_network(net: TaskNetwork, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_state(net), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_network(path: str) -> TaskNetwork:
    with open(path, "r", encoding="utf-8") as fh:
        return network_from_state(json.load(fh))

"""Config-driven orchestration: feature extraction, network training,
embedding export, CRF training, prediction, and evaluation.

Stages communicate only through files under the configured output
directory. Every stage writes a `manifest.json` recording the config
hash, the seed, the package version, sha256 hashes of the inputs it
consumed and the outputs it produced; a consuming stage recomputes the
hashes of upstream files and refuses to run on stale or edited inputs.
All outputs are byte-deterministic given the same config and seed.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import __version__, crf, data, evaluation, factorgraph, features, nn
from .mtmetrics import NistScorer

TASKS = ("A", "B", "C")


class StageError(RuntimeError):
    """A pipeline stage failed; the message carries the stage label."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# --- configuration -------------------------------------------------------


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    dataset_train: str = ""
    dataset_test: str = ""
    dataset_format: str = "json"
    train_fraction: float = 0.7
    feature_mode: str = "text"              # "text" or "inline"
    embedding_paths: dict[str, str] = field(default_factory=dict)
    oov_table: str = ""
    network: dict[str, dict] = field(default_factory=dict)   # per-task overrides
    train: dict[str, dict] = field(default_factory=dict)     # per-task TrainConfig overrides
    topology: str = "CRF_ACBC"
    crf_epochs: int = 10
    crf_learning_rate: float = 0.001
    crf_l2: dict[str, float] = field(default_factory=lambda: dict(crf.DEFAULT_CRF_L2))
    bp: crf.BpConfig = field(default_factory=crf.BpConfig)
    crf_inference: str = "bp"
    edge_feature_mode: str = "bias_plus_cosine"
    synth: data.SynthConfig = field(default_factory=data.SynthConfig)
    baseline_target: str = "C"
    baseline_upstream: tuple[str, ...] = ("A", "B")
    baseline_use_gold: bool = False
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str, overrides: Mapping | None = None) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if overrides:
            doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PipelineConfig":
        dataset = doc.get("dataset", {})
        crf_doc = doc.get("crf", {})
        bp_doc = crf_doc.get("bp", {})
        synth_doc = doc.get("synth", {})
        baseline = doc.get("pipeline_baseline", {})
        cfg = cls(
            seed=int(doc.get("seed", 0)),
            out_dir=doc.get("out_dir", "out"),
            dataset_train=dataset.get("train", ""),
            dataset_test=dataset.get("test", ""),
            dataset_format=dataset.get("format", "json"),
            train_fraction=float(dataset.get("train_fraction", 0.7)),
            feature_mode=doc.get("mode", "text"),
            embedding_paths=dict(doc.get("embeddings", {})),
            oov_table=doc.get("oov_table", ""),
            network=doc.get("network", {}),
            train=doc.get("train", {}),
            topology=crf_doc.get("topology", "CRF_ACBC"),
            crf_epochs=int(crf_doc.get("epochs", 10)),
            crf_learning_rate=float(crf_doc.get("learning_rate", 0.001)),
            crf_l2={t: float(v) for t, v in crf_doc.get("l2", crf.DEFAULT_CRF_L2).items()},
            bp=crf.BpConfig(
                schedule=bp_doc.get("schedule", "synchronous"),
                damping=float(bp_doc.get("damping", 0.5)),
                tolerance=float(bp_doc.get("tolerance", 1e-6)),
                max_iters=int(bp_doc.get("max_iters", 200)),
            ),
            crf_inference=crf_doc.get("inference", "bp"),
            edge_feature_mode=crf_doc.get("edge_feature_mode", "bias_plus_cosine"),
            synth=data.SynthConfig(**synth_doc) if synth_doc else data.SynthConfig(),
            baseline_target=baseline.get("target", "C"),
            baseline_upstream=tuple(baseline.get("upstream", ("A", "B"))),
            baseline_use_gold=bool(baseline.get("use_gold", False)),
            raw=dict(doc),
        )
        factorgraph.resolve_topology(cfg.topology)
        return cfg

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True).encode()
        return hashlib.sha256(canonical).hexdigest()

    def train_config(self, task: str) -> nn.TrainConfig:
        overrides = dict(self.train.get(task, {}))
        rms = overrides.pop("rmsprop", None)
        if rms is not None:
            overrides["rmsprop"] = nn.RmspropConfig(**rms)
        return nn.default_train_config(task, seed=self.seed, **overrides)


# --- manifests ------------------------------------------------------------


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(stage: str, cfg: PipelineConfig, out_dir: str,
                   inputs: Mapping[str, str], outputs: Iterable[str]) -> None:
    manifest = {
        "stage": stage,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "version": __version__,
        "inputs": {name: {"path": path, "sha256": _sha256(path)}
                   for name, path in sorted(inputs.items())},
        "outputs": {name: _sha256(os.path.join(out_dir, name))
                    for name in sorted(outputs)},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def check_upstream(stage: str, upstream_dir: str, needed: Iterable[str]) -> None:
    """Refuse to consume files whose bytes no longer match the manifest
    their producing stage wrote."""
    manifest_path = os.path.join(upstream_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise StageError(stage, f"missing upstream manifest {manifest_path}; "
                                f"run the earlier stage first")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for name in needed:
        path = os.path.join(upstream_dir, name)
        if not os.path.exists(path):
            raise StageError(stage, f"missing upstream file {path}")
        recorded = manifest["outputs"].get(name)
        if recorded is None:
            raise StageError(stage, f"{name} is not recorded in {manifest_path}")
        if _sha256(path) != recorded:
            raise StageError(stage, f"{path} is stale: bytes differ from the "
                                    f"hash recorded by stage {manifest['stage']!r}")


# --- feature extraction ----------------------------------------------------


@dataclass
class FeatureBundle:
    """Aligned ids and feature rows for one subtask."""

    task: str
    ids: list[tuple[str, str, str]]        # (group id, i, m); m == "" for B
    dataset: nn.TaskDataset


@dataclass
class ExtractorState:
    """Everything fitted during extraction that prediction-time feature
    computation must reuse."""

    mode: str
    slot_layout: dict[str, list[tuple[str, int]]]
    scalers: dict[str, features.MinMaxScaler]
    nist_state: dict | None
    table_names: list[str]

    def to_state(self) -> dict:
        return {
            "mode": self.mode,
            "slot_layout": {t: [[n, w] for n, w in slots]
                            for t, slots in sorted(self.slot_layout.items())},
            "scalers": {t: s.to_state() for t, s in sorted(self.scalers.items())},
            "nist": self.nist_state,
            "tables": self.table_names,
        }

    @classmethod
    def from_state(cls, state: dict) -> "ExtractorState":
        return cls(
            mode=state["mode"],
            slot_layout={t: [(n, w) for n, w in slots]
                         for t, slots in state["slot_layout"].items()},
            scalers={t: features.MinMaxScaler.from_state(s)
                     for t, s in state["scalers"].items()},
            nist_state=state["nist"],
            table_names=list(state["tables"]),
        )


def _load_tables(cfg: PipelineConfig) -> list[features.EmbeddingTable]:
    tables = []
    for name in sorted(cfg.embedding_paths):
        path = cfg.embedding_paths[name]
        if not os.path.exists(path):
            raise StageError("extract", f"embedding file not found: {path}")
        tables.append(features.load_embedding_table(path, name=name))
    if not tables:
        raise StageError("extract", "text mode needs at least one embedding table")
    return tables


def _fit_nist(groups: list[data.QuestionGroup]) -> NistScorer:
    """Info weights from the reference side: all question texts."""
    refs = []
    for group in groups:
        refs.append(features.tokenize(group.question_text))
        refs.extend(features.tokenize(t.question_text) for t in group.threads)
    return NistScorer().fit(refs)


def _text_rows(groups, extractor, tables, oov_table):
    """Unscaled per-task slot matrices from question-group texts."""
    ids = {t: [] for t in TASKS}
    rows = {t: {} for t in TASKS}

    def push(task, slot, vec):
        rows[task].setdefault(slot, []).append(np.asarray(vec, dtype=float))

    def text_vector(text):
        parts = []
        for table in tables:
            vec, _ = features.avg_embedding(features.tokenize(text), table)
            parts.append(vec)
        return np.concatenate(parts)

    labels = {t: [] for t in TASKS}
    maps = data.LabelMaps()
    for group in groups:
        z_q = text_vector(group.question_text)
        for thread in group.threads:
            z_qi = text_vector(thread.question_text)
            phi_b = extractor.extract(group.question_text, thread.question_text)
            ids["B"].append((group.question_id, str(thread.rank), ""))
            push("B", "z_q", z_q)
            push("B", "z_qi", z_qi)
            push("B", "phi_b", phi_b)
            labels["B"].append(data.b_label(thread, maps))
            for comment in thread.comments:
                node_vec = features.node_and_meta_features(
                    comment.text, comment.rank, thread.rank,
                    comment.author, thread.question_author, oov_table)
                z_c = np.concatenate([text_vector(comment.text), node_vec])
                phi_a = extractor.extract(thread.question_text, comment.text)
                phi_c = extractor.extract(group.question_text, comment.text)
                key = (group.question_id, str(thread.rank), str(comment.rank))
                ids["A"].append(key)
                push("A", "z_qi", z_qi)
                push("A", "z_c", z_c)
                push("A", "phi_a", phi_a)
                labels["A"].append(data.a_label(comment, maps))
                ids["C"].append(key)
                push("C", "z_q", z_q)
                push("C", "z_qi", z_qi)
                push("C", "z_c", z_c)
                push("C", "phi_a", phi_a)
                push("C", "phi_b", phi_b)
                push("C", "phi_c", phi_c)
                labels["C"].append(data.c_label(comment, maps))
    return ids, rows, labels


_INPUT_SLOTS = {"A": ("z_qi", "z_c"), "B": ("z_q", "z_qi"), "C": ("z_q", "z_qi", "z_c")}
_PAIRWISE_SLOTS = {"A": ("phi_a",), "B": ("phi_b",), "C": ("phi_a", "phi_b", "phi_c")}


def _inline_rows(groups):
    """Inline-vector mode: each task sees its node's stored vector as
    both the input block and the pairwise slot."""
    ids = {t: [] for t in TASKS}
    rows = {t: {} for t in TASKS}
    labels = {t: [] for t in TASKS}
    maps = data.LabelMaps()
    for group in groups:
        for thread in group.threads:
            vec_b = thread.vectors.get("b")
            if vec_b is None:
                raise StageError("extract", f"thread {thread.question_id} has no "
                                            f"inline vector 'b'")
            ids["B"].append((group.question_id, str(thread.rank), ""))
            rows["B"].setdefault("z", []).append(vec_b)
            rows["B"].setdefault("phi", []).append(vec_b)
            labels["B"].append(data.b_label(thread, maps))
            for comment in thread.comments:
                key = (group.question_id, str(thread.rank), str(comment.rank))
                for task, name in (("A", "a"), ("C", "c")):
                    vec = comment.vectors.get(name)
                    if vec is None:
                        raise StageError("extract", f"comment {comment.id} has no "
                                                    f"inline vector {name!r}")
                    ids[task].append(key)
                    rows[task].setdefault("z", []).append(vec)
                    rows[task].setdefault("phi", []).append(vec)
                labels["A"].append(data.a_label(comment, maps))
                labels["C"].append(data.c_label(comment, maps))
    return ids, rows, labels


def _bundle(task, ids, rows, labels, layout) -> FeatureBundle:
    inputs = {}
    pairwise = {}
    for slot, width in layout:
        stack = rows.get(slot, [])
        matrix = np.vstack(stack) if stack else np.zeros((0, width))
        if matrix.shape[1] != width:
            raise StageError("extract", f"slot {slot} width {matrix.shape[1]} != {width}")
        if slot.startswith("phi"):
            pairwise[slot] = matrix
        else:
            inputs[slot] = matrix
    label_arr = None
    if labels and all(v is not None for v in labels):
        label_arr = np.array(labels, dtype=float)
    return FeatureBundle(task, ids, nn.TaskDataset(inputs=inputs, pairwise=pairwise,
                                                   labels=label_arr))


def extract_features(
    cfg: PipelineConfig,
    train_groups: list[data.QuestionGroup],
    test_groups: list[data.QuestionGroup],
) -> tuple[dict[str, FeatureBundle], dict[str, FeatureBundle], ExtractorState]:
    """Fit feature machinery on the training groups, apply to both
    splits, min-max scale per slot."""
    if cfg.feature_mode == "text":
        tables = _load_tables(cfg)
        oov = None
        if cfg.oov_table:
            matches = [t for t in tables if t.name == cfg.oov_table]
            if not matches:
                raise StageError("extract", f"oov_table {cfg.oov_table!r} not among "
                                            f"embedding tables")
            oov = matches[0]
        nist = _fit_nist(train_groups)
        extractor = features.PairwiseExtractor(tables, nist, oov_table=oov)
        train_parts = _text_rows(train_groups, extractor, tables, oov)
        test_parts = _text_rows(test_groups, extractor, tables, oov)
        nist_state = nist.to_state()
        table_names = [t.name for t in tables]
    elif cfg.feature_mode == "inline":
        train_parts = _inline_rows(train_groups)
        test_parts = _inline_rows(test_groups)
        nist_state = None
        table_names = []
    else:
        raise StageError("extract", f"unknown feature mode {cfg.feature_mode!r}")

    slot_layout = {}
    bundles_train = {}
    bundles_test = {}
    scalers = {}
    for task in TASKS:
        ids, rows, labels = train_parts
        layout = [(slot, np.vstack(vals).shape[1]) for slot, vals in rows[task].items()]
        slot_layout[task] = layout
        raw_train = _bundle(task, ids[task], rows[task], labels[task], layout)
        t_ids, t_rows, t_labels = test_parts
        raw_test = _bundle(task, t_ids[task], t_rows[task], t_labels[task], layout)

        stacked = _stack_bundle(raw_train, layout)
        scaler = features.MinMaxScaler.fit(stacked)
        scalers[task] = scaler
        bundles_train[task] = _apply_scaler(raw_train, scaler, layout)
        bundles_test[task] = _apply_scaler(raw_test, scaler, layout)
    state = ExtractorState(cfg.feature_mode, slot_layout, scalers, nist_state, table_names)
    return bundles_train, bundles_test, state


def _stack_bundle(bundle: FeatureBundle, layout) -> np.ndarray:
    cols = []
    for slot, _ in layout:
        source = bundle.dataset.pairwise if slot.startswith("phi") else bundle.dataset.inputs
        cols.append(source[slot])
    return np.concatenate(cols, axis=1)


def _apply_scaler(bundle: FeatureBundle, scaler, layout) -> FeatureBundle:
    if bundle.dataset.n == 0:
        return bundle
    scaled = scaler.apply(_stack_bundle(bundle, layout))
    inputs, pairwise = {}, {}
    offset = 0
    for slot, width in layout:
        chunk = scaled[:, offset:offset + width]
        offset += width
        (pairwise if slot.startswith("phi") else inputs)[slot] = chunk
    return FeatureBundle(bundle.task, bundle.ids,
                         nn.TaskDataset(inputs=inputs, pairwise=pairwise,
                                        labels=bundle.dataset.labels))


def make_spec(cfg: PipelineConfig, task: str, bundle: FeatureBundle) -> nn.TaskNetworkSpec:
    overrides = cfg.network.get(task, {})
    if cfg.feature_mode == "inline":
        dim = bundle.dataset.inputs["z"].shape[1]
        return nn.simple_spec(task, input_dim=dim,
                              hidden=int(overrides.get("hidden", 4)),
                              task_layer_dim=int(overrides.get("task_layer", 8)))
    input_widths = {s: m.shape[1] for s, m in bundle.dataset.inputs.items()}
    pairwise_widths = {s: m.shape[1] for s, m in bundle.dataset.pairwise.items()}
    return nn.standard_spec(
        task, input_widths, pairwise_widths,
        interaction_dims=overrides.get("interaction"),
        task_layer_dim=overrides.get("task_layer"),
    )


# --- split handling --------------------------------------------------------


def load_splits(cfg: PipelineConfig, stage: str):
    if not cfg.dataset_train:
        raise StageError(stage, "config has no dataset.train path")
    if not os.path.exists(cfg.dataset_train):
        raise StageError(stage, f"dataset not found: {cfg.dataset_train}")
    train = data.parse_dataset(cfg.dataset_train, cfg.dataset_format)
    if cfg.dataset_test:
        if not os.path.exists(cfg.dataset_test):
            raise StageError(stage, f"dataset not found: {cfg.dataset_test}")
        test = data.parse_dataset(cfg.dataset_test, cfg.dataset_format)
        return train, test
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(train))
    cut = max(1, int(round(cfg.train_fraction * len(train))))
    if len(train) > 1:
        cut = min(cut, len(train) - 1)
    train_groups = [train[k] for k in sorted(order[:cut])]
    test_groups = [train[k] for k in sorted(order[cut:])]
    return train_groups, test_groups


# --- graphs from embeddings -------------------------------------------------


def group_embeddings_from_maps(
    group: data.QuestionGroup,
    vectors: dict[str, dict[tuple, np.ndarray]],
    with_labels: bool = True,
) -> factorgraph.GroupEmbeddings:
    """Assemble one group's per-node embedding structure from id-keyed
    vector maps (as read back from the embed stage)."""
    maps = data.LabelMaps()
    a_vecs, c_vecs, b_vecs = [], [], []
    a_lab, b_lab, c_lab = [], [], []
    for thread in group.threads:
        b_key = (group.question_id, str(thread.rank), "")
        if b_key not in vectors["B"]:
            raise KeyError(f"missing B embedding for {b_key}")
        b_vecs.append(vectors["B"][b_key])
        b_lab.append(data.b_label(thread, maps) if with_labels else None)
        row_a, row_c, lab_a, lab_c = [], [], [], []
        for comment in thread.comments:
            key = (group.question_id, str(thread.rank), str(comment.rank))
            for task, row in (("A", row_a), ("C", row_c)):
                if key not in vectors[task]:
                    raise KeyError(f"missing {task} embedding for {key}")
                row.append(vectors[task][key])
            lab_a.append(data.a_label(comment, maps) if with_labels else None)
            lab_c.append(data.c_label(comment, maps) if with_labels else None)
        a_vecs.append(row_a)
        c_vecs.append(row_c)
        a_lab.append(lab_a)
        c_lab.append(lab_c)
    has_labels = with_labels and all(v is not None for v in b_lab) and all(
        v is not None for row in a_lab + c_lab for v in row)
    return factorgraph.GroupEmbeddings(
        a_vectors=a_vecs, b_vectors=b_vecs, c_vectors=c_vecs,
        a_labels=a_lab if has_labels else None,
        b_labels=b_lab if has_labels else None,
        c_labels=c_lab if has_labels else None,
    )


# --- ranking assembly --------------------------------------------------------


def ranked_predictions(groups, task, scores: dict[tuple, float]) -> list:
    """Per-query ranked lists for one subtask from an id->score map.

    A queries are threads (items: comments, gold goodness), B queries
    are groups (items: threads, gold relatedness), C queries are groups
    (items: all comments, gold relevance).
    """
    maps = data.LabelMaps()
    preds = []
    for group in groups:
        if task == "B":
            items = []
            for thread in group.threads:
                key = (group.question_id, str(thread.rank), "")
                items.append((thread.question_id, scores[key],
                              data.b_label(thread, maps)))
            preds.append(evaluation.RankedPrediction(group.question_id, items))
        elif task == "C":
            items = []
            for thread in group.threads:
                for comment in thread.comments:
                    key = (group.question_id, str(thread.rank), str(comment.rank))
                    items.append((comment.id, scores[key], data.c_label(comment, maps)))
            preds.append(evaluation.RankedPrediction(group.question_id, items))
        else:
            for thread in group.threads:
                items = []
                for comment in thread.comments:
                    key = (group.question_id, str(thread.rank), str(comment.rank))
                    items.append((comment.id, scores[key], data.a_label(comment, maps)))
                preds.append(evaluation.RankedPrediction(
                    f"{group.question_id}/{thread.question_id}", items))
    return preds


def baseline_scores(groups, seed: int) -> dict[str, dict[str, dict[tuple, float]]]:
    """Id-keyed score maps for the four trivial baselines."""
    out: dict[str, dict[str, dict]] = {
        "Random order": {"A": {}, "B": {}, "C": {}},
        "Chronological order": {"A": {}},
        "IR order": {"B": {}},
        "IR+Chron. order": {"C": {}},
    }
    for group in groups:
        per_group = data.baseline_orderings(group, seed=seed)
        gid = group.question_id
        for task in ("A", "B", "C"):
            for key, score in per_group["random"][task].items():
                out["Random order"][task][_expand_key(gid, task, key)] = score
        for key, score in per_group["chronological"]["A"].items():
            out["Chronological order"]["A"][_expand_key(gid, "A", key)] = score
        for key, score in per_group["ir"]["B"].items():
            out["IR order"]["B"][_expand_key(gid, "B", key)] = score
        for key, score in per_group["ir_chronological"]["C"].items():
            out["IR+Chron. order"]["C"][_expand_key(gid, "C", key)] = score
    return out


def _expand_key(gid, task, key):
    if task == "B":
        return (gid, str(key), "")
    return (gid, str(key[0]), str(key[1]))


# --- report ----------------------------------------------------------------


def metric_rows_to_kv(rows: list[dict]) -> str:
    lines = []
    for row in rows:
        system = row["system"].replace(" ", "_")
        for metric in ("MAP", "AvgRec", "MRR", "Acc", "P", "R", "F1"):
            if metric in row:
                lines.append(f"{system}.{row['task']}.{metric}={row[metric]:.6f}")
    return "\n".join(lines) + "\n"


def format_report(rows: list[dict]) -> str:
    header = f"{'system':<34} {'task':<4} {'MAP':>8} {'AvgRec':>8} {'MRR':>8}" \
             f" {'Acc':>8} {'P':>8} {'R':>8} {'F1':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        cells = [f"{row['system']:<34}", f"{row['task']:<4}"]
        for metric in ("MAP", "AvgRec", "MRR", "Acc", "P", "R", "F1"):
            cells.append(f"{row[metric] * 100:>8.2f}" if metric in row else f"{'-':>8}")
        lines.append(" ".join(cells))
    return "\n".join(lines) + "\n"


def metric_row(system: str, task: str, preds, classification: bool = False) -> dict:
    row = {"system": system, "task": task}
    row.update(evaluation.ranking_metrics(preds))
    if classification:
        pairs = [(1 if score >= 0.5 else 0, gold)
                 for p in preds for _, score, gold in p.items]
        row.update(evaluation.classification_metrics(pairs))
    return row

"""The on-disk pipeline stages behind the CLI subcommands.

Each stage reads its inputs (config, dataset, upstream artifacts),
verifies upstream manifests, writes its outputs under a per-stage
subdirectory of the configured output directory, and finishes with its
own manifest. Reruns with an identical config and seed are
byte-identical.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import crf, data, evaluation, factorgraph, features, nn
from .pipeline import (
    ExtractorState,
    FeatureBundle,
    PipelineConfig,
    StageError,
    TASKS,
    baseline_scores,
    check_upstream,
    extract_features,
    format_report,
    group_embeddings_from_maps,
    load_splits,
    make_spec,
    metric_row,
    metric_rows_to_kv,
    ranked_predictions,
    write_manifest,
)

_ID_COLUMNS = ("group", "i", "m")


def _dir(cfg: PipelineConfig, stage: str) -> str:
    path = os.path.join(cfg.out_dir, stage)
    os.makedirs(path, exist_ok=True)
    return path


def _dataset_inputs(cfg: PipelineConfig) -> dict[str, str]:
    inputs = {"dataset_train": cfg.dataset_train}
    if cfg.dataset_test:
        inputs["dataset_test"] = cfg.dataset_test
    return inputs


def _write_bundle(path: str, bundle: FeatureBundle, layout) -> None:
    header = list(_ID_COLUMNS) + ["label"]
    for slot, width in layout:
        header += [f"{slot}:{k}" for k in range(width)]
    from .pipeline import _stack_bundle

    matrix = (_stack_bundle(bundle, layout) if bundle.dataset.n
              else np.zeros((0, sum(w for _, w in layout))))
    labels = bundle.dataset.labels
    label_col = (labels.reshape(-1, 1) if labels is not None
                 else np.full((matrix.shape[0], 1), -1.0))
    features.write_feature_matrix(path, header, bundle.ids,
                                  np.concatenate([label_col, matrix], axis=1))


def _read_bundle(path: str, task: str, layout) -> FeatureBundle:
    _, ids, matrix = features.read_feature_matrix(path, id_columns=3)
    labels = matrix[:, 0] if matrix.shape[0] else np.zeros(0)
    body = matrix[:, 1:]
    inputs, pairwise = {}, {}
    offset = 0
    for slot, width in layout:
        chunk = body[:, offset:offset + width]
        offset += width
        (pairwise if slot.startswith("phi") else inputs)[slot] = chunk
    label_arr = labels if matrix.shape[0] and np.all(labels >= 0) else None
    return FeatureBundle(task, ids, nn.TaskDataset(inputs=inputs, pairwise=pairwise,
                                                   labels=label_arr))


def stage_extract(cfg: PipelineConfig) -> str:
    """Features for both splits plus the fitted extractor state."""
    out = _dir(cfg, "extract")
    train_groups, test_groups = load_splits(cfg, "extract")
    bundles_train, bundles_test, state = extract_features(cfg, train_groups, test_groups)
    outputs = []
    for task in TASKS:
        layout = state.slot_layout[task]
        for split, bundles in (("train", bundles_train), ("test", bundles_test)):
            name = f"features_{task}_{split}.tsv"
            _write_bundle(os.path.join(out, name), bundles[task], layout)
            outputs.append(name)
    with open(os.path.join(out, "extractor.json"), "w", encoding="utf-8") as fh:
        json.dump(state.to_state(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    outputs.append("extractor.json")
    write_manifest("extract", cfg, out, _dataset_inputs(cfg), outputs)
    return out


def _load_extractor(cfg: PipelineConfig, stage: str) -> ExtractorState:
    path = os.path.join(cfg.out_dir, "extract", "extractor.json")
    if not os.path.exists(path):
        raise StageError(stage, f"missing {path}; run extract first")
    with open(path, "r", encoding="utf-8") as fh:
        return ExtractorState.from_state(json.load(fh))


def _load_features(cfg: PipelineConfig, stage: str, split: str) -> dict[str, FeatureBundle]:
    state = _load_extractor(cfg, stage)
    extract_dir = os.path.join(cfg.out_dir, "extract")
    names = [f"features_{task}_{split}.tsv" for task in TASKS] + ["extractor.json"]
    check_upstream(stage, extract_dir, names)
    return {task: _read_bundle(os.path.join(extract_dir, f"features_{task}_{split}.tsv"),
                               task, state.slot_layout[task])
            for task in TASKS}


def stage_train_dnn(cfg: PipelineConfig) -> str:
    """Train the three task networks on the training-split features."""
    out = _dir(cfg, "dnn")
    bundles = _load_features(cfg, "train-dnn", "train")
    outputs = []
    for task in TASKS:
        bundle = bundles[task]
        if bundle.dataset.labels is None:
            raise StageError("train-dnn", f"task {task} training features carry no labels")
        spec = make_spec(cfg, task, bundle)
        net, trace = nn.train_dnn(bundle.dataset, spec, cfg.train_config(task))
        nn.save_network(net, os.path.join(out, f"network_{task}.json"))
        outputs.append(f"network_{task}.json")
        trace_doc = {
            "best_epoch": trace.best_epoch,
            "best_validation_loss": trace.best_validation_loss,
            "stopped_early": trace.stopped_early,
            "epochs": [[r.epoch, r.train_loss, r.validation_loss] for r in trace.epochs],
        }
        with open(os.path.join(out, f"trace_{task}.json"), "w", encoding="utf-8") as fh:
            json.dump(trace_doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
        outputs.append(f"trace_{task}.json")
    write_manifest("train-dnn", cfg, out, _dataset_inputs(cfg), outputs)
    return out


def _load_networks(cfg: PipelineConfig, stage: str) -> dict[str, nn.TaskNetwork]:
    dnn_dir = os.path.join(cfg.out_dir, "dnn")
    names = [f"network_{task}.json" for task in TASKS]
    check_upstream(stage, dnn_dir, names)
    return {task: nn.load_network(os.path.join(dnn_dir, f"network_{task}.json"))
            for task in TASKS}


def stage_embed(cfg: PipelineConfig) -> str:
    """Task embeddings plus network probabilities for both splits."""
    out = _dir(cfg, "embed")
    nets = _load_networks(cfg, "embed")
    outputs = []
    for split in ("train", "test"):
        bundles = _load_features(cfg, "embed", split)
        for task in TASKS:
            bundle = bundles[task]
            if bundle.dataset.n:
                emb = nn.extract_embeddings(nets[task], bundle.dataset)
                probs = nn.predict_proba(nets[task], bundle.dataset).reshape(-1, 1)
                labels = (bundle.dataset.labels.reshape(-1, 1)
                          if bundle.dataset.labels is not None
                          else np.full((emb.shape[0], 1), -1.0))
                matrix = np.concatenate([labels, probs, emb], axis=1)
            else:
                matrix = np.zeros((0, 2 + nets[task].spec.embedding_dim))
            header = list(_ID_COLUMNS) + ["label", "dnn_prob"] + [
                f"x{k}" for k in range(nets[task].spec.embedding_dim)]
            name = f"embeddings_{task}_{split}.tsv"
            features.write_feature_matrix(os.path.join(out, name), header,
                                          bundle.ids, matrix)
            outputs.append(name)
    write_manifest("embed", cfg, out, _dataset_inputs(cfg), outputs)
    return out


def _load_embeddings(cfg: PipelineConfig, stage: str, split: str):
    embed_dir = os.path.join(cfg.out_dir, "embed")
    names = [f"embeddings_{task}_{split}.tsv" for task in TASKS]
    check_upstream(stage, embed_dir, names)
    vectors: dict[str, dict[tuple, np.ndarray]] = {}
    probs: dict[str, dict[tuple, float]] = {}
    labels: dict[str, dict[tuple, int]] = {}
    for task in TASKS:
        path = os.path.join(embed_dir, f"embeddings_{task}_{split}.tsv")
        _, ids, matrix = features.read_feature_matrix(path, id_columns=3)
        vectors[task] = {key: matrix[row, 2:] for row, key in enumerate(ids)}
        probs[task] = {key: float(matrix[row, 1]) for row, key in enumerate(ids)}
        labels[task] = {key: int(matrix[row, 0]) for row, key in enumerate(ids)}
    return vectors, probs, labels


def _graphs_for_groups(cfg, groups, vectors, with_labels=True):
    graphs = []
    for group in groups:
        embeddings = group_embeddings_from_maps(group, vectors, with_labels=with_labels)
        graphs.append(factorgraph.build_graph(embeddings, cfg.topology,
                                              cfg.edge_feature_mode))
    return graphs


def stage_train_crf(cfg: PipelineConfig) -> str:
    """Joint model over the training-split graphs."""
    out = _dir(cfg, "crf")
    nets = _load_networks(cfg, "train-crf")
    vectors, _, _ = _load_embeddings(cfg, "train-crf", "train")
    train_groups, _ = load_splits(cfg, "train-crf")
    graphs = _graphs_for_groups(cfg, train_groups, vectors)
    train_cfg = crf.CrfTrainConfig(
        epochs=cfg.crf_epochs,
        rmsprop=nn.RmspropConfig(learning_rate=cfg.crf_learning_rate),
        l2_by_task=cfg.crf_l2,
        bp=cfg.bp,
        inference=cfg.crf_inference,
        seed=cfg.seed,
    )
    params, trace = crf.train_crf(
        graphs, nets, train_cfg,
        edge_feature_width=factorgraph.edge_feature_width(cfg.edge_feature_mode))
    crf.save_parameters(params, os.path.join(out, "crf.json"))
    with open(os.path.join(out, "trace.json"), "w", encoding="utf-8") as fh:
        json.dump({"epoch_mean_nll": trace, "topology": cfg.topology},
                  fh, sort_keys=True, indent=1)
        fh.write("\n")
    write_manifest("train-crf", cfg, out, _dataset_inputs(cfg),
                   ["crf.json", "trace.json"])
    return out


def stage_predict(cfg: PipelineConfig) -> str:
    """Joint-model scores next to the factorized network scores on the
    evaluation split."""
    out = _dir(cfg, "predict")
    crf_dir = os.path.join(cfg.out_dir, "crf")
    check_upstream("predict", crf_dir, ["crf.json"])
    params = crf.load_parameters(os.path.join(crf_dir, "crf.json"))
    vectors, probs, labels = _load_embeddings(cfg, "predict", "test")
    _, test_groups = load_splits(cfg, "predict")
    outputs = []
    scores: dict[str, dict[tuple, float]] = {t: {} for t in TASKS}
    for group in test_groups:
        embeddings = group_embeddings_from_maps(group, vectors, with_labels=True)
        graph = factorgraph.build_graph(embeddings, cfg.topology, cfg.edge_feature_mode)
        node_scores = crf.predict(graph, params, cfg.bp, cfg.crf_inference)
        for ref, score in node_scores.items():
            m = "" if ref.m is None else str(ref.m)
            scores[ref.task][(group.question_id, str(ref.i), m)] = score
    for task in TASKS:
        ids = sorted(scores[task])
        rows = np.array(
            [[labels[task].get(key, -1), probs[task].get(key, np.nan), scores[task][key]]
             for key in ids], dtype=float).reshape(len(ids), 3)
        name = f"scores_{task}.tsv"
        features.write_feature_matrix(
            os.path.join(out, name),
            list(_ID_COLUMNS) + ["label", "dnn_prob", "crf_score"], ids, rows)
        outputs.append(name)
    write_manifest("predict", cfg, out, _dataset_inputs(cfg), outputs)
    return out


def stage_evaluate(cfg: PipelineConfig) -> str:
    """Metric report over the evaluation split: baselines, factorized
    networks, and the joint model."""
    out = _dir(cfg, "eval")
    predict_dir = os.path.join(cfg.out_dir, "predict")
    names = [f"scores_{task}.tsv" for task in TASKS]
    check_upstream("evaluate", predict_dir, names)
    _, test_groups = load_splits(cfg, "evaluate")
    rows = []
    dnn_scores: dict[str, dict[tuple, float]] = {}
    crf_scores: dict[str, dict[tuple, float]] = {}
    for task in TASKS:
        path = os.path.join(predict_dir, f"scores_{task}.tsv")
        _, ids, matrix = features.read_feature_matrix(path, id_columns=3)
        dnn_scores[task] = {key: float(matrix[k, 1]) for k, key in enumerate(ids)}
        crf_scores[task] = {key: float(matrix[k, 2]) for k, key in enumerate(ids)}
    baselines = baseline_scores(test_groups, seed=cfg.seed)
    for system, per_task in baselines.items():
        for task in sorted(per_task):
            preds = ranked_predictions(test_groups, task, per_task[task])
            rows.append(metric_row(system, task, preds))
    for task in TASKS:
        preds = ranked_predictions(test_groups, task, dnn_scores[task])
        rows.append(metric_row(f"DNN_{task}", task, preds, classification=True))
    for task in TASKS:
        preds = ranked_predictions(test_groups, task, crf_scores[task])
        rows.append(metric_row(cfg.topology, task, preds, classification=True))
    report = format_report(rows)
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    with open(os.path.join(out, "metrics.kv"), "w", encoding="utf-8") as fh:
        fh.write(metric_rows_to_kv(rows))
    write_manifest("evaluate", cfg, out, _dataset_inputs(cfg),
                   ["report.txt", "metrics.kv"])
    return out


def stage_synth(cfg: PipelineConfig, out_path: str | None = None) -> str:
    """Generate the synthetic planted-dependency dataset."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = out_path or os.path.join(cfg.out_dir, "synthetic.json")
    groups = data.synth_generate(cfg.synth)
    data.save_dataset(groups, path)
    return path


def stage_train(cfg: PipelineConfig) -> str:
    """The full two-step pipeline: extract, train the networks, embed,
    train the joint model, predict, evaluate."""
    stage_extract(cfg)
    stage_train_dnn(cfg)
    stage_embed(cfg)
    stage_train_crf(cfg)
    stage_predict(cfg)
    return stage_evaluate(cfg)


def stage_pipeline_baseline(cfg: PipelineConfig) -> str:
    """Upstream predictions (or gold labels) appended as features to the
    target task's network, which is then retrained and evaluated."""
    out = _dir(cfg, "pipeline_baseline")
    target = cfg.baseline_target
    upstream = tuple(cfg.baseline_upstream)
    if target not in TASKS:
        raise StageError("pipeline-baseline", f"unknown target task {target!r}")
    bad = [u for u in upstream if u not in TASKS or u == target]
    if bad or not upstream:
        raise StageError("pipeline-baseline",
                         f"upstream tasks must name other tasks, got {upstream!r}")
    train_groups, test_groups = load_splits(cfg, "pipeline-baseline")
    bundles_train = _load_features(cfg, "pipeline-baseline", "train")
    bundles_test = _load_features(cfg, "pipeline-baseline", "test")

    upstream_nets = {}
    if not cfg.baseline_use_gold:
        for task in upstream:
            bundle = bundles_train[task]
            if bundle.dataset.labels is None:
                raise StageError("pipeline-baseline",
                                 f"upstream task {task} has no labels")
            spec = make_spec(cfg, task, bundle)
            upstream_nets[task], _ = nn.train_dnn(bundle.dataset, spec,
                                                  cfg.train_config(task))

    def upstream_columns(bundles_split, groups, target_bundle):
        """One column per upstream task, aligned with the target rows.

        Comment-level predictions aggregate by thread mean when the
        target is the thread-level task.
        """
        columns = []
        maps = data.LabelMaps()
        for task in upstream:
            if cfg.baseline_use_gold:
                values = _gold_map(groups, task, maps)
            else:
                feats = bundles_split[task]
                probs = nn.predict_proba(upstream_nets[task], feats.dataset)
                values = dict(zip(feats.ids, (float(p) for p in probs)))
            column = [_lookup_upstream(values, key, task, target)
                      for key in target_bundle.ids]
            columns.append(np.array(column, dtype=float).reshape(-1, 1))
        return np.concatenate(columns, axis=1)

    augmented = {}
    for split, bundles, groups in (("train", bundles_train, train_groups),
                                   ("test", bundles_test, test_groups)):
        bundle = bundles[target]
        extra = upstream_columns(bundles, groups, bundle)
        pairwise = dict(bundle.dataset.pairwise)
        pairwise["phi_upstream"] = extra
        augmented[split] = FeatureBundle(
            target, bundle.ids,
            nn.TaskDataset(inputs=dict(bundle.dataset.inputs), pairwise=pairwise,
                           labels=bundle.dataset.labels))

    base_spec = make_spec(cfg, target, bundles_train[target])
    spec = nn.TaskNetworkSpec(
        task=base_spec.task,
        input_blocks=base_spec.input_blocks,
        interactions=base_spec.interactions,
        pairwise_slots=base_spec.pairwise_slots + (("phi_upstream", len(upstream)),),
        task_layer_dim=base_spec.task_layer_dim,
    )
    net, _ = nn.train_dnn(augmented["train"].dataset, spec, cfg.train_config(target))
    probs = nn.predict_proba(net, augmented["test"].dataset)
    scores = dict(zip(augmented["test"].ids, (float(p) for p in probs)))
    label = "gold" if cfg.baseline_use_gold else "predicted"
    system = f"DNN_{target}+{'+'.join('P' + u for u in upstream)}[{label}]"
    preds = ranked_predictions(test_groups, target, scores)
    rows = [metric_row(system, target, preds, classification=True)]
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_report(rows))
    with open(os.path.join(out, "metrics.kv"), "w", encoding="utf-8") as fh:
        fh.write(metric_rows_to_kv(rows))
    write_manifest("pipeline-baseline", cfg, out, _dataset_inputs(cfg),
                   ["report.txt", "metrics.kv"])
    return out


def _gold_map(groups, task, maps):
    values = {}
    for group in groups:
        for thread in group.threads:
            if task == "B":
                values[(group.question_id, str(thread.rank), "")] = float(
                    data.b_label(thread, maps))
            else:
                for comment in thread.comments:
                    key = (group.question_id, str(thread.rank), str(comment.rank))
                    label = (data.a_label(comment, maps) if task == "A"
                             else data.c_label(comment, maps))
                    values[key] = float(label)
    return values


def _lookup_upstream(values, key, task, target):
    """Align an upstream value with a target row key, aggregating
    comment-level upstream values by thread mean for thread-level
    targets and broadcasting thread-level values to comments."""
    group, i, m = key
    if task == "B":
        return values[(group, i, "")]
    if target == "B":
        thread_values = [v for (g, ti, tm), v in values.items()
                         if g == group and ti == i and tm != ""]
        return float(np.mean(thread_values))
    return values[key]

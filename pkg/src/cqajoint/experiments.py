"""In-memory synthetic experiments: measure what joint inference adds
over the factorized task networks on planted-dependency data.

The generator plants comment relevance as (goodness AND relatedness)
with label-flip noise, while every node's features are only a noisy
indicator of its own label. A network for one task can therefore never
see the other tasks' evidence, but a CRF with across-task edges can,
and the gap between the two is the quantity of interest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import crf, data, evaluation, factorgraph, nn
from .pipeline import (
    PipelineConfig,
    extract_features,
    group_embeddings_from_maps,
    ranked_predictions,
)

TASKS = ("A", "B", "C")


@dataclass
class ExperimentConfig:
    synth: data.SynthConfig = field(default_factory=data.SynthConfig)
    train_fraction: float = 0.6
    hidden: int = 4
    task_layer: int = 8
    dnn_epochs: int = 30
    dnn_patience: int = 8
    dnn_learning_rate: float = 0.01
    crf_epochs: int = 8
    crf_learning_rate: float = 0.01
    bp: crf.BpConfig = field(default_factory=lambda: crf.BpConfig(
        damping=0.0, tolerance=1e-6, max_iters=100))
    topologies: tuple[str, ...] = ("CRF_AC", "CRF_BC", "CRF_ACBC")
    seed: int = 0


@dataclass
class ExperimentResult:
    dnn_map: dict[str, float]                       # task -> MAP
    crf_map: dict[str, dict[str, float]]            # topology -> task -> MAP
    local_baseline_map: dict[str, float]            # task -> MAP of product model


def _train_networks(cfg: ExperimentConfig, bundles_train):
    nets = {}
    for task in TASKS:
        bundle = bundles_train[task]
        spec = nn.simple_spec(task, input_dim=bundle.dataset.inputs["z"].shape[1],
                              hidden=cfg.hidden, task_layer_dim=cfg.task_layer)
        train_cfg = nn.TrainConfig(
            batch_size=32, dropout_rate=0.2,
            l2_strength=nn.DEFAULT_L2[task],
            max_epochs=cfg.dnn_epochs, patience=cfg.dnn_patience,
            rmsprop=nn.RmspropConfig(learning_rate=cfg.dnn_learning_rate),
            seed=cfg.seed,
        )
        nets[task], _ = nn.train_dnn(bundle.dataset, spec, train_cfg)
    return nets


def _vector_maps(nets, bundles):
    vectors = {}
    probs = {}
    for task in TASKS:
        bundle = bundles[task]
        emb = nn.extract_embeddings(nets[task], bundle.dataset)
        prob = nn.predict_proba(nets[task], bundle.dataset)
        vectors[task] = {key: emb[row] for row, key in enumerate(bundle.ids)}
        probs[task] = {key: float(prob[row]) for row, key in enumerate(bundle.ids)}
    return vectors, probs


def run_synthetic_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """One full run: generate, split, train networks, train one CRF per
    topology, and score MAP per task on the held-out groups."""
    groups = data.synth_generate(cfg.synth)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(groups))
    cut = int(round(cfg.train_fraction * len(groups)))
    train_groups = [groups[k] for k in sorted(order[:cut])]
    test_groups = [groups[k] for k in sorted(order[cut:])]

    pipe_cfg = PipelineConfig(seed=cfg.seed, feature_mode="inline")
    bundles_train, bundles_test, _ = extract_features(pipe_cfg, train_groups, test_groups)
    nets = _train_networks(cfg, bundles_train)
    vectors_train, _ = _vector_maps(nets, bundles_train)
    vectors_test, probs_test = _vector_maps(nets, bundles_test)

    dnn_map = {}
    for task in TASKS:
        preds = ranked_predictions(test_groups, task, probs_test[task])
        dnn_map[task] = evaluation.mean_average_precision(preds)

    # the locally normalized product model scores each node by its own
    # factor, so its per-task rankings coincide with the networks'
    local_baseline_map = dict(dnn_map)

    crf_map = {}
    for topology in cfg.topologies:
        train_graphs = [
            factorgraph.build_graph(
                group_embeddings_from_maps(g, vectors_train), topology)
            for g in train_groups
        ]
        train_cfg = crf.CrfTrainConfig(
            epochs=cfg.crf_epochs,
            rmsprop=nn.RmspropConfig(learning_rate=cfg.crf_learning_rate),
            bp=cfg.bp, inference="bp", seed=cfg.seed,
        )
        params, _ = crf.train_crf(train_graphs, nets, train_cfg)
        scores = {t: {} for t in TASKS}
        for group in test_groups:
            graph = factorgraph.build_graph(
                group_embeddings_from_maps(group, vectors_test), topology)
            for ref, score in crf.predict(graph, params, cfg.bp).items():
                m = "" if ref.m is None else str(ref.m)
                scores[ref.task][(group.question_id, str(ref.i), m)] = score
        crf_map[topology] = {
            task: evaluation.mean_average_precision(
                ranked_predictions(test_groups, task, scores[task]))
            for task in TASKS
        }
    return ExperimentResult(dnn_map, crf_map, local_baseline_map)


def multi_seed_gains(cfg: ExperimentConfig, seeds) -> dict:
    """Average DNN and CRF MAP across seeds; each seed regenerates the
    corpus and retrains everything."""
    runs = []
    for seed in seeds:
        synth = data.SynthConfig(
            groups=cfg.synth.groups,
            threads_per_group=cfg.synth.threads_per_group,
            comments_per_thread=cfg.synth.comments_per_thread,
            p_a=cfg.synth.p_a, p_b=cfg.synth.p_b,
            noise=cfg.synth.noise,
            embedding_noise_sigma=cfg.synth.embedding_noise_sigma,
            seed=seed,
        )
        run_cfg = ExperimentConfig(
            synth=synth, train_fraction=cfg.train_fraction,
            hidden=cfg.hidden, task_layer=cfg.task_layer,
            dnn_epochs=cfg.dnn_epochs, dnn_patience=cfg.dnn_patience,
            dnn_learning_rate=cfg.dnn_learning_rate,
            crf_epochs=cfg.crf_epochs, crf_learning_rate=cfg.crf_learning_rate,
            bp=cfg.bp, topologies=cfg.topologies, seed=seed,
        )
        runs.append(run_synthetic_experiment(run_cfg))
    mean_dnn = {t: float(np.mean([r.dnn_map[t] for r in runs])) for t in TASKS}
    mean_crf = {
        topology: {t: float(np.mean([r.crf_map[topology][t] for r in runs]))
                   for t in TASKS}
        for topology in cfg.topologies
    }
    return {"dnn": mean_dnn, "crf": mean_crf, "runs": runs}

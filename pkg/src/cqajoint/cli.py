"""Command-line entry point.

Subcommands mirror the pipeline stages: extract, train-dnn, embed,
train-crf, predict, evaluate, train (all of the above in order), synth,
and pipeline-baseline. Every command takes --config pointing at the
declarative JSON document, with --seed / --out / --topology overrides.
Exit status is 0 on success and 1 on failure with a stage-labeled
diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .data import DatasetError
from .pipeline import PipelineConfig, StageError
from . import stages

_COMMANDS = {
    "extract": stages.stage_extract,
    "train-dnn": stages.stage_train_dnn,
    "embed": stages.stage_embed,
    "train-crf": stages.stage_train_crf,
    "predict": stages.stage_predict,
    "evaluate": stages.stage_evaluate,
    "train": stages.stage_train,
    "pipeline-baseline": stages.stage_pipeline_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cqajoint",
        description="Multitask thread classification: task networks plus a "
                    "globally normalized CRF.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_COMMANDS) + ["synth"]:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="pipeline config JSON")
        cmd.add_argument("--seed", type=int, default=None, help="override config seed")
        cmd.add_argument("--out", default=None, help="override output directory")
        cmd.add_argument("--topology", default=None, help="override CRF topology preset")
        if name == "synth":
            cmd.add_argument("--dataset-out", default=None,
                             help="where to write the generated dataset")
    return parser


def load_config(args) -> PipelineConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    cfg = PipelineConfig.from_file(args.config, overrides)
    if args.topology is not None:
        doc = dict(cfg.raw)
        doc.setdefault("crf", {})
        doc["crf"] = dict(doc["crf"], topology=args.topology)
        cfg = PipelineConfig.from_dict(doc)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "synth":
            path = stages.stage_synth(cfg, args.dataset_out)
            print(f"[synth] wrote {path}")
        else:
            out = _COMMANDS[args.command](cfg)
            print(f"[{args.command}] done: {out}")
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

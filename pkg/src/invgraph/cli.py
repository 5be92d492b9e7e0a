"""Command-line surface.

Subcommands: gen-data, train, eval, export, gradcheck.  Exit codes: 0 on
success, 1 for validation/contract failures (bad files, bad configs,
incompatible checkpoints, undefined metrics), 2 for numeric failures
(non-finite losses, failed gradient audits map to their own nonzero
codes via the command result).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import gradcheck as gradcheck_mod
from . import synth, training
from .config import RunConfig
from .errors import InvgraphError, NumericError
from .graphs import load_dataset, serialize_dataset
from .metrics import EvalReport


def _cmd_gen_data(args) -> int:
    spec = synth.SynthSpec.from_json(args.spec)
    graphs, _ = synth.generate(spec)
    serialize_dataset(graphs, args.out)
    print(f"wrote {len(graphs)} graphs to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = RunConfig.from_json(args.config)
    dataset = load_dataset(config.dataset)
    result, _ = training.train(config, dataset, out_dir=args.out)
    agg = result.aggregate()
    print(
        json.dumps(
            {
                "metric": result.metric,
                "val_mean": agg["val_mean"],
                "test_mean": agg["test_mean"],
                "test_std": agg["test_std"],
                "out": str(args.out),
            },
            sort_keys=True,
        )
    )
    return 0


def _report_block(report: EvalReport) -> dict:
    return report.to_dict()


def _cmd_eval(args) -> int:
    state, _ = training.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    graphs = dataset.by_split(args.split)
    metric = training.select_metric(state.task, state.config)
    blocks = {args.split: _report_block(training.evaluate(state, graphs, metric))}
    if state.task.kind == "binary" and metric != "accuracy":
        blocks["accuracy"] = _report_block(training.evaluate(state, graphs, "accuracy"))
    print(json.dumps(blocks, sort_keys=True))
    return 0


def _cmd_export(args) -> int:
    state, _ = training.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    n = training.export_embeddings(state, dataset, args.out)
    print(f"wrote {n} embedding rows to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    return 0 if gradcheck_mod.run(full=args.full) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invgraph",
        description="Invariant graph representation learning in latent discrete space",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic OOD dataset")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--out", required=True, help="output dataset JSONL path")
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("train", help="train one config over its seeds")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", required=True, help="output directory for results and checkpoints")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True, choices=("train", "val", "test"))
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("export", help="export per-graph embeddings as JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_export)

    p = sub.add_parser("gradcheck", help="finite-difference audit of all gradients")
    p.add_argument("--full", action="store_true", help="also audit every mode and task head")
    p.set_defaults(fn=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (InvgraphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

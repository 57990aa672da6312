"""Command line entry point: ``casp <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .backbones import load_checkpoint
from .config import ConfigError, RunConfig, dumps, load_config, write_json
from .ingest import load_dataset


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run config (defaults used for missing fields)")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a config field, e.g. --set adapt.epochs=6 (repeatable)",
    )


def _add_seed_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casp", description="Contrastive adaptation + stable pseudo labels")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic source/target task")
    _add_config_args(p)
    p.add_argument("--print-defaults", action="store_true", help="print the full default config and exit")

    p = sub.add_parser("run", help="run every stage, method and seed; write the aggregate table")
    _add_config_args(p)
    p.add_argument("--resume", action="store_true", help="reuse existing pretrained checkpoints")

    for name, help_ in (
        ("pretrain", "train the source model for one seed"),
        ("adapt", "stage 1 for one seed (needs the pretrain checkpoint)"),
        ("pseudolabel", "stability report for one seed (needs snapshots)"),
        ("selftrain", "stage 2 for one seed (needs the adapted checkpoint and report)"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_config_args(p)
        _add_seed_arg(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", type=Path, help="metrics.json path (default: <checkpoint>/metrics.json)")
    return parser


def _run(args) -> int:
    if args.command == "synth" and args.print_defaults:
        print(dumps(RunConfig().to_dict()))
        return 0
    if args.command == "eval":
        model = load_checkpoint(args.checkpoint)
        metrics = pipeline.evaluate_model(model, load_dataset(args.dataset), args.split)
        out = write_json(args.out or args.checkpoint / "metrics.json", metrics)
        print(out)
        return 0

    cfg = load_config(args.config, args.overrides)
    if args.command == "synth":
        for path in pipeline.synthesize(cfg):
            print(path)
        return 0
    if args.command == "run":
        if args.resume:
            cfg.reuse_pretrain = True
        agg = pipeline.run(cfg)
        print(pipeline.format_table(agg), end="")
        return 0

    seed = args.seed
    if args.command == "pretrain":
        pipeline.stage_pretrain(cfg, seed, load_dataset(cfg.path("source_dir")))
    elif args.command == "adapt":
        pipeline.stage_adapt(cfg, seed, load_dataset(cfg.path("target_dir")))
    elif args.command == "pseudolabel":
        report = pipeline.stage_pseudolabel(cfg, seed)
        print(f"selected {report.n_selected}/{len(report.ids)} (threshold {report.threshold:.6g})")
    elif args.command == "selftrain":
        pipeline.stage_selftrain(cfg, seed, load_dataset(cfg.path("target_dir")))
    print(pipeline.seed_dir(cfg, seed))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as e:
        print(f"casp {args.command}: config error: {e}", file=sys.stderr)
        return 2
    except pipeline.StageError as e:
        print(f"casp {args.command}: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"casp {args.command}: [{args.command}] {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 missing artifact.
"""
from __future__ import annotations

import argparse
import sys

from .config import (ConfigError, ExperimentConfig, apply_overrides, load_config,
                     save_config)
from .pipeline import (MissingArtifactError, run_distill, run_eval, run_sweep,
                       run_train_teacher, run_transfer)
from .report import write_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.set:
        apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value by dotted path (repeatable)")
    p.add_argument("--seed", type=int, default=None, help="override the run seed")
    p.add_argument("--force", action="store_true",
                   help="recompute even if outputs already exist")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nrrdd",
        description="Dataset distillation with non-critical region refinement and "
                    "distance-based relabeling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train the teacher network")
    _add_common(p)

    p = sub.add_parser("distill", help="discover, refine, and relabel synthetic data")
    _add_common(p)
    p.add_argument("--skip-nrr", action="store_true",
                   help="discovery-only ablation: no refinement pass")
    p.add_argument("--no-bn-loss", action="store_true",
                   help="refine without the BN-statistics term")
    p.add_argument("--modes", default=None,
                   help="comma-separated label modes to store (default: config label_mode)")
    p.add_argument("--tag", default=None, help="artifact directory tag override")

    p = sub.add_parser("transfer", help="train and evaluate a student from a store")
    _add_common(p)
    p.add_argument("--mode", default=None, help="label mode to train from")
    p.add_argument("--tag", default=None, help="distillation tag to read")

    p = sub.add_parser("eval", help="evaluate a snapshot on the test split")
    _add_common(p)
    p.add_argument("--snapshot", required=True, help="snapshot file to evaluate")

    p = sub.add_parser("report", help="emit plots and summary tables from results")
    p.add_argument("--results", required=True, help="results.jsonl file or run directory")
    p.add_argument("--out", default=None, help="report output directory")

    p = sub.add_parser("sweep", help="grid over one parameter x seeds")
    _add_common(p)
    p.add_argument("--param", required=True, help="dotted config path, e.g. refine.epsilon")
    p.add_argument("--values", required=True,
                   help="comma-separated values, parsed as JSON scalars")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--modes", default=None, help="comma-separated label modes")

    p = sub.add_parser("init-config", help="write a default config file")
    p.add_argument("path", help="where to write the JSON config")
    return parser


def _parse_values(raw: str) -> list:
    import json as _json

    out = []
    for tok in raw.split(","):
        tok = tok.strip()
        try:
            out.append(_json.loads(tok))
        except _json.JSONDecodeError:
            out.append(tok)
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "init-config":
            save_config(ExperimentConfig(), args.path)
            print(f"wrote default config to {args.path}")
            return EXIT_OK
        if args.command == "report":
            written = write_report(args.results, args.out)
            for p in written:
                print(p)
            return EXIT_OK

        cfg = _load(args)
        if args.command == "train-teacher":
            path = run_train_teacher(cfg, force=args.force)
            print(path)
        elif args.command == "distill":
            modes = args.modes.split(",") if args.modes else None
            out = run_distill(cfg, skip_nrr=args.skip_nrr, no_bn_loss=args.no_bn_loss,
                              modes=modes, tag=args.tag, force=args.force)
            print(out)
        elif args.command == "transfer":
            row = run_transfer(cfg, tag=args.tag, mode=args.mode, force=args.force)
            print(f"accuracy={row['accuracy']:.4f} store_bytes={row['store_bytes']}")
        elif args.command == "eval":
            acc = run_eval(cfg, args.snapshot)
            print(f"accuracy={acc:.4f}")
        elif args.command == "sweep":
            rows = run_sweep(cfg, args.param, _parse_values(args.values),
                             [int(s) for s in args.seeds.split(",")],
                             modes=args.modes.split(",") if args.modes else None,
                             force=args.force)
            for row in rows:
                print(f"{args.param}={row['sweep_value']} seed={row['seed']} "
                      f"mode={row['mode']} accuracy={row['accuracy']:.4f}")
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifactError, FileNotFoundError) as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())

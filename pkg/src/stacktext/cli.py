"""Command-line entry point.

Subcommands mirror the pipeline stages; `run` executes everything. Each
stage resumes from artifacts persisted by earlier invocations.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import runner
from .config import ConfigError, validate_config


def _add_common(sub):
    sub.add_argument("--config", required=True, help="experiment config file")
    sub.add_argument("--out", default=None, help="output directory (overrides config)")
    sub.add_argument("--seed", default=None,
                     help="comma-separated seed list (overrides config)")
    sub.add_argument("--dataset", default=None,
                     help="dataset CSV path (overrides config)")


def _load_config(args):
    cfg = validate_config(args.config)
    if args.dataset:
        path = Path(args.dataset)
        if not path.is_file():
            raise ConfigError(f"--dataset: no such file {path}")
        cfg.values["dataset.path"] = str(path)
        cfg.values["dataset.name"] = path.stem
    if args.seed:
        cfg.values["seeds"] = [int(s) for s in args.seed.split(",") if s.strip()]
    out = Path(args.out if args.out else cfg.values["output.dir"])
    return cfg, out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stacktext",
        description="Stacking-ensemble text classification experiments")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("run", "full pipeline: prep, train, stack, evaluate, report"),
            ("prep", "materialize per-seed dataset splits"),
            ("train", "train baseline and transformer models"),
            ("stack", "train the stacking ensemble"),
            ("evaluate", "aggregate per-seed results"),
            ("report", "emit report tables and loss curves")):
        _add_common(subs.add_parser(name, help=help_text))
    args = parser.parse_args(argv)

    try:
        cfg, out = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        failures: list[str] = []
        if args.command == "run":
            bundle = runner.run_experiment(cfg, out)
            failures = bundle.incomplete
        elif args.command == "prep":
            runner.stage_prep(cfg, out)
        elif args.command == "train":
            failures = runner.stage_train(cfg, out)
        elif args.command == "stack":
            failures = runner.stage_stack(cfg, out)
        elif args.command in ("evaluate", "report"):
            bundle = runner.stage_evaluate(cfg, out)
            if args.command == "report":
                runner.emit_report(bundle, out)
            failures = bundle.incomplete
    except Exception as exc:
        print(f"stage {args.command} failed: {exc}", file=sys.stderr)
        return 1

    for msg in failures:
        print(f"incomplete: {msg}", file=sys.stderr)
    if failures:
        return 1
    print(f"{args.command}: ok (outputs in {out})")
    return 0


if __name__ == "__main__":
    sys.exit(main())

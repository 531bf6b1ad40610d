"""Command line entry point: ``ebreg train|eval|predict|density|sweep``.

Exit codes: 0 success, 2 configuration or contract error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .errors import (ConfigurationError, ContractError, EvaluationError, RefinementError,
                     TrainingError)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ebreg", description="Energy-based regression experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (default: output_dir from the config)")

    e = sub.add_parser("eval", help="evaluate a checkpoint and write a JSON report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", help="CSV test set (default: the config's generated test split)")
    e.add_argument("--out", help="report path (default: report.json next to the checkpoint)")

    pr = sub.add_parser("predict", help="point predictions for an inputs CSV")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--in", dest="inp", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--trace", action="store_true", help="also write <out>.trace.csv")

    d = sub.add_parser("density", help="export a grid-normalised density surface CSV")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--x-count", type=int)

    s = sub.add_parser("sweep", help="proposal sweep over sigma sets, e.g. --grid '0.1;0.8;0.1,0.8'")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", required=True)
    s.add_argument("--seeds", type=_seeds, default=[0])
    s.add_argument("--out")
    return p


def run(args) -> int:
    if args.command == "train":
        info = harness.cmd_train(args.config, args.out)
        hist = info["result"].history
        print(f"wrote {info['checkpoint']} ({len(hist)} epochs"
              + (f", final loss {hist[-1]:.6f})" if hist else ")"))
    elif args.command == "eval":
        report = harness.cmd_eval(args.ckpt, args.data, args.out)
        print(json.dumps(report, sort_keys=True, indent=1))
    elif args.command == "predict":
        print(f"wrote {harness.cmd_predict(args.ckpt, args.inp, args.out, args.trace)}")
    elif args.command == "density":
        print(f"wrote {harness.cmd_density(args.ckpt, args.out, args.x_count)}")
    elif args.command == "sweep":
        info = harness.cmd_sweep(args.config, args.grid, args.seeds, args.out)
        print((info["dir"] / "table.csv").read_text(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigurationError, ContractError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, RefinementError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

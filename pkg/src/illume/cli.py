"""Command-line entry point: ``illume {train,explain,bench,eval,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset CSV (header row, optional row_id column)")
    p.add_argument("--schema", help="schema JSON listing column names and kinds")
    p.add_argument("--preds", help="black-box predictions CSV: row_id + one probability column per class")
    p.add_argument("--synthetic-manifest", help="JSON manifest of a transparent synthetic classifier")
    p.add_argument("--split-seed", type=int, default=None, help="seed of the 80/20 split (default 0)")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=None, help="latent dimension")
    p.add_argument("--alpha", type=int, default=None, help="nonzero weights kept per latent column")
    p.add_argument("--lambda-y", type=float, default=None)
    p.add_argument("--lambda-st", type=float, default=None)
    p.add_argument("--lambda-so", type=float, default=None)
    p.add_argument("--lambda-co", type=float, default=None)
    p.add_argument("--stability-mode", choices=("jacobian", "perturbation"), default=None)
    p.add_argument("--epochs", type=int, default=None, help="finetune epochs (default 100)")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="illume", description="Instance-wise latent surrogate explanations.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train encoder and surrogate, write a model file")
    _add_data(p)
    _add_training(p)
    p.add_argument("--surrogate", choices=("lr", "dt"), default="lr")
    p.add_argument("--target-class", type=int, default=None, help="class explained by importance scores")
    p.add_argument("--model", required=True, help="output model JSON")

    p = sub.add_parser("explain", help="explain held-out rows, write JSON lines")
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--kind", choices=("importance", "rule", "counterfactual"), default="importance")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="synthetic correctness benchmark")
    _add_training(p)
    p.add_argument("--family", choices=("linear", "rule"), default=None, help="default: both")
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--n-instances", type=int, default=2048)
    p.add_argument("--n-classifiers", type=int, default=5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="latent-quality, robustness and faithfulness metrics")
    _add_data(p)
    p.add_argument("--model", required=True)
    p.add_argument("--metric", choices=pipeline.METRICS, required=True)
    p.add_argument("--kind", choices=("importance", "rule"), default=None)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect", help="print a model summary")
    p.add_argument("--model", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            pipeline.run_train(args)
        elif args.command == "explain":
            pipeline.run_explain(args)
        elif args.command == "bench":
            pipeline.run_bench(args)
        elif args.command == "eval":
            pipeline.run_eval(args)
        else:
            json.dump(pipeline.inspect_model(args.model), sys.stdout, indent=1)
            sys.stdout.write("\n")
    except (OSError, ValueError, LookupError) as exc:
        print(f"illume {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: train / infer / eval.

Exit codes follow the channel toolkit convention: 0 success, 1 usage error,
2 data or validation error, 3 training/pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import DataError, PipelineError, UsageError
from .evaluation import EvalConfig, evaluate_end_to_end
from .inference import infer_sample
from .training import LR_SCHEDULES, TrainConfig, default_loss_csv, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_weights(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(
            f"--loss-weights needs three comma-separated values, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"bad --loss-weights value: {exc}") from exc


def _cmd_train(args) -> dict:
    cfg = TrainConfig(
        data_dir=args.data, epochs=args.epochs, batch_size=args.batch_size,
        lr=args.lr, weight_decay=args.weight_decay,
        loss_weights=_parse_weights(args.loss_weights),
        val_split=args.val_split, seed=args.seed,
        lr_schedule=args.lr_schedule)
    log = None if args.quiet else (lambda s: print(s, file=sys.stderr))
    report = train(cfg, args.out, loss_csv=args.loss_csv, log=log)
    return {k: report[k] for k in ("weights", "loss_csv", "epochs",
                                   "train_samples", "val_samples",
                                   "final_train_loss", "final_val_loss")}


def _cmd_infer(args) -> dict:
    report = infer_sample(args.data, args.weights, args.index, args.out)
    return {k: report[k] for k in ("out", "index", "scene", "snr_db", "n_paths")}


def _cmd_eval(args) -> dict:
    cfg = EvalConfig(
        data_dir=args.data, primary_cli=args.primary_cli, weights=args.weights,
        split=args.split, val_split=args.val_split, truth=args.truth,
        seed=args.seed, dict_size=args.dict_size,
        include_omp=not args.skip_omp, inject_labels=args.inject_labels,
        max_samples=args.max_samples)
    result = evaluate_end_to_end(cfg, args.out)
    return {"out": result["out"], "rows": len(result["rows"]),
            "estimator": result["estimator"],
            "summary": [{k: r[k] for k in ("estimator", "snr_db", "failures",
                                           "mean_nmse_db")}
                        for r in result["rows"]]}


def build_parser() -> _Parser:
    p = _Parser(prog="dcnn",
                description="Convolutional Phase-1 estimator: train on exported "
                            "observation datasets, emit external estimates, and "
                            "evaluate through the channel toolkit CLI")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("train", help="fit the network on a dataset directory")
    s.add_argument("--data", required=True, help="exported dataset directory")
    s.add_argument("--out", required=True, help="output weights file")
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--batch-size", type=int, default=64)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--weight-decay", type=float, default=1e-4)
    s.add_argument("--loss-weights", default="1,1,1",
                   help="angle,dist,gain term weights")
    s.add_argument("--val-split", type=float, default=0.1,
                   help="fraction of scenes held out for validation")
    s.add_argument("--lr-schedule", choices=LR_SCHEDULES, default="cosine")
    s.add_argument("--loss-csv", default=None,
                   help="per-epoch loss CSV (default: alongside weights)")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("infer", help="write estimates JSON for one sample")
    s.add_argument("--data", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--out", required=True, help="output estimates JSON")
    s.add_argument("--index", type=int, default=0, help="dataset sample index")
    s.set_defaults(func=_cmd_infer)

    s = sub.add_parser("eval", help="NMSE-vs-SNR table through the toolkit CLI")
    s.add_argument("--data", required=True)
    s.add_argument("--weights", default=None)
    s.add_argument("--primary-cli", default="hspm",
                   help="channel toolkit executable (name or path)")
    s.add_argument("--out", required=True, help="output CSV")
    s.add_argument("--split", choices=("holdout", "all"), default="holdout")
    s.add_argument("--val-split", type=float, default=0.1)
    s.add_argument("--truth", choices=("swm", "hspm"), default="swm")
    s.add_argument("--seed", type=int, default=0,
                   help="base seed for baseline observations")
    s.add_argument("--dict-size", type=int, default=64)
    s.add_argument("--skip-omp", action="store_true",
                   help="omit the OMP baseline rows")
    s.add_argument("--inject-labels", action="store_true",
                   help="feed dataset labels instead of network outputs")
    s.add_argument("--max-samples", type=int, default=None,
                   help="cap on evaluated samples (diagnostics)")
    s.set_defaults(func=_cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            raise UsageError("a command is required (train, infer, eval)")
        report = args.func(args)
        print(json.dumps(report, sort_keys=True))
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

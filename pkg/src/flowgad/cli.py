"""Command-line entry points.

Subcommands mirror the pipeline stages; `run-all` chains them. Exit codes:
0 success, 2 schema/config errors, 3 data/artifact errors, 4 numeric
failures, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import load_config
from .errors import FlowgadError
from .metrics import format_report
from .pipeline import (
    run_all,
    stage_build_graphs,
    stage_evaluate,
    stage_ingest,
    stage_score,
    stage_synth,
    stage_train,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file (defaults baked in)")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--out-dir", help="artifact directory (default runs/default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowgad",
        description="Benign-only host anomaly ranking from flow logs.",
    )
    parser.add_argument("--version", action="version", version=f"flowgad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a labeled synthetic flow CSV")
    _add_common(p)

    p = sub.add_parser("ingest", help="normalize a raw flow CSV into canonical records")
    _add_common(p)
    p.add_argument("--input", help="source flow CSV (else config input_csv / synth output)")

    p = sub.add_parser("build-graphs", help="window records into graph snapshots")
    _add_common(p)

    p = sub.add_parser("train", help="train the edge-reconstruction model on benign windows")
    _add_common(p)

    p = sub.add_parser("score", help="score test windows (model or a baseline)")
    _add_common(p)
    p.add_argument(
        "--method",
        default="model",
        choices=("model", "iforest", "autoencoder"),
    )

    p = sub.add_parser("evaluate", help="aggregate scores and compute ranking metrics")
    _add_common(p)
    p.add_argument(
        "--method",
        default="model",
        choices=("model", "iforest", "autoencoder"),
    )
    p.add_argument(
        "--aggregation",
        choices=("mean", "max", "q90", "topk_mean"),
        help="host aggregation operator (model only; default from config)",
    )
    p.add_argument(
        "--no-calibration",
        action="store_true",
        help="rank on raw reconstruction scores instead of calibrated ones",
    )
    p.add_argument(
        "--fpr-budgets",
        help="comma-separated FPR budgets, e.g. 0.01,0.05",
    )
    p.add_argument("--plots", action="store_true", help="emit ROC/PR/histogram images")

    p = sub.add_parser("run-all", help="run every stage end to end")
    _add_common(p)
    p.add_argument("--input", help="source flow CSV (else synthesize)")
    p.add_argument(
        "--aggregation",
        choices=("mean", "max", "q90", "topk_mean"),
        help="host aggregation operator for the main report",
    )
    p.add_argument("--plots", action="store_true")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {"seed": getattr(args, "seed", None), "out_dir": getattr(args, "out_dir", None)}
        if getattr(args, "input", None):
            overrides["input_csv"] = args.input
        if getattr(args, "aggregation", None):
            overrides["aggregation"] = args.aggregation
        config = load_config(args.config, overrides)
        out_dir = config.out_dir

        if args.command == "synth-gen":
            path = stage_synth(config, out_dir)
            print(f"wrote {path}")
        elif args.command == "ingest":
            path = stage_ingest(config, out_dir, getattr(args, "input", None))
            print(f"wrote {path}")
        elif args.command == "build-graphs":
            path = stage_build_graphs(config, out_dir)
            print(f"wrote {path}")
        elif args.command == "train":
            path = stage_train(config, out_dir)
            print(f"wrote {path}")
        elif args.command == "score":
            path = stage_score(config, out_dir, args.method)
            print(f"wrote {path}")
        elif args.command == "evaluate":
            budgets = None
            if args.fpr_budgets:
                budgets = tuple(float(b) for b in args.fpr_budgets.split(","))
            report = stage_evaluate(
                config,
                out_dir,
                method=args.method,
                aggregation=args.aggregation,
                use_calibration=not args.no_calibration,
                budgets=budgets,
                plots=args.plots,
            )
            print(format_report(report), end="")
        elif args.command == "run-all":
            run_all(config, out_dir, plots=args.plots)
        else:  # pragma: no cover - argparse enforces choices
            raise SystemExit(2)
    except FlowgadError as exc:
        print(f"flowgad: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"flowgad: i/o error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

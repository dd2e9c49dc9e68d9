"""Command line entry point: ``cltrsim <stage> --config cfg.yaml``.

Exit codes: 0 success, 1 some grid cell failed, 2 bad input (missing dataset,
malformed config or report).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .pipeline import STAGES, DatasetMissingError, ExperimentConfig, run_pipeline
from .plots import ReportFormatError, emit_plots


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cltrsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the grid through '{stage}'")
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, help="output directory (overrides config)")
        p.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
        p.add_argument("--seed-override", type=int, help="run this single seed instead")
    p = sub.add_parser("plot", help="bar charts from a report CSV")
    p.add_argument("report", type=Path, nargs="?")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _plot(args) -> int:
    report = args.report
    out = args.out
    if report is None:
        if args.config is None and out is None:
            print("plot: give a report path, --out or --config", file=sys.stderr)
            return 2
        base = out or Path(ExperimentConfig.load(args.config).output)
        report = base / "report.csv"
        out = base
    out = out or report.parent
    if not report.is_file():
        print(f"plot: {report} not found", file=sys.stderr)
        return 2
    try:
        emit_plots(report, out / "plots")
    except ReportFormatError as e:
        print(f"plot: {e}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    if args.command == "plot":
        return _plot(args)
    try:
        cfg = ExperimentConfig.load(args.config)
    except (OSError, ValueError, TypeError) as e:
        print(f"{args.command}: bad config: {e}", file=sys.stderr)
        return 2
    if args.seed_override is not None:
        cfg = replace(cfg, seeds=[args.seed_override])
    try:
        return run_pipeline(cfg, until=args.command, jobs=args.jobs, out=args.out)
    except DatasetMissingError as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

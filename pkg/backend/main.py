"""
CoopFlat command line
Cooperative multi-task training with flat-minima search: run experiments, plot
runs, fetch MNIST and run the verification oracles.

    python backend/main.py run configs/synthetic.yaml
    python backend/main.py plot runs/synthetic
    python backend/main.py compare runs/vanilla runs/no_reg runs/mt_cool
    python backend/main.py fetch-mnist data/mnist
    python backend/main.py verify
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from mnist_fetch import ChecksumMismatchError, DownloadError, fetch_mnist
from services.comparison import COMPARISON_FILE, ComparisonError, compare_ladder, load_summary, write_comparisons
from services.harness import (
    ConfigValidationError, CsvSchemaError, NoRunsFoundError, RunAbortedError, run, validate_config,
)
from services.plotting import emit_plots
from services.verification import run_oracle_suite
from settings import get_settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def configure_logging(level: Optional[str] = None) -> None:
    settings = get_settings()
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if settings.log_file:
        log_file = Path(settings.log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s',
        handlers=handlers,
        force=True,
    )


# ============================================================================
# Subcommands
# ============================================================================

def cmd_run(args: argparse.Namespace) -> int:
    config = validate_config(args.config)
    if args.output_dir is not None:
        config = config.model_copy(update={"output_dir": args.output_dir})
    summaries = run(config)
    for summary in summaries:
        accuracy = " / ".join(f"{100 * s.mean:.2f} ± {100 * s.std:.4f}" for s in summary.accuracy) or "n/a"
        print(f"{summary.name} [{summary.method.value}, lambda={summary.lam:g}] accuracy: {accuracy}")
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    for path in emit_plots(args.run_dir):
        print(path)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    summaries = [load_summary(path) for path in args.run_dirs]
    comparisons = compare_ladder(summaries)
    for c in comparisons:
        print(f"{c.candidate} vs {c.baseline}: {c.wins}/{c.repeats} wins, "
              f"difference {100 * c.mean_difference:+.2f} points, t p={c.t_pvalue}, Wilcoxon p={c.wilcoxon_pvalue}")
    output = args.output or Path(args.run_dirs[-1]) / COMPARISON_FILE
    print(write_comparisons(comparisons, output))
    return EXIT_OK


def cmd_fetch(args: argparse.Namespace) -> int:
    for path in fetch_mnist(args.target_dir):
        print(path)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    report = run_oracle_suite(seed=args.seed, landscape_seeds=args.landscape_seeds)
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.name}" + (f": {check.detail}" if check.detail and not check.passed else ""))
    print(f"{len(report.checks) - len(report.failures)}/{len(report.checks)} oracle checks passed")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopflat", description="Cooperative multi-task training with flat minima")
    parser.add_argument("--log-level", default=None, help="overrides COOPFLAT_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment file")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--output-dir", type=Path, default=None)
    p_run.set_defaults(handler=cmd_run)

    p_plot = sub.add_parser("plot", help="write SVG plots for a run directory")
    p_plot.add_argument("run_dir", type=Path)
    p_plot.set_defaults(handler=cmd_plot)

    p_compare = sub.add_parser("compare", help="paired comparison of run directories, baseline first")
    p_compare.add_argument("run_dirs", type=Path, nargs="+")
    p_compare.add_argument("--output", type=Path, default=None)
    p_compare.set_defaults(handler=cmd_compare)

    p_fetch = sub.add_parser("fetch-mnist", help="download and verify the MNIST IDX files")
    p_fetch.add_argument("target_dir", type=Path, nargs="?", default=None)
    p_fetch.set_defaults(handler=cmd_fetch)

    p_verify = sub.add_parser("verify", help="run the gradient, reduction and landscape oracles")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--landscape-seeds", type=int, default=10)
    p_verify.set_defaults(handler=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except ConfigValidationError as e:
        for line in e.diagnostics:
            print(f"{e.path}: {line}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RunAbortedError, NoRunsFoundError, CsvSchemaError, ComparisonError, DownloadError, ChecksumMismatchError,
            OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

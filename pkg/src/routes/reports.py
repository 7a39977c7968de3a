import argparse
import logging
from pathlib import Path

from src.repository import reports as repository_reports

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    """
    Add the ``compare`` command.
    """
    parser = subparsers.add_parser("compare", help="tabulate final and intermediate estimates of run summaries")
    parser.add_argument("summaries", nargs="+", type=Path, help="summary.json files")
    parser.add_argument("--iteration", type=int, help="iteration of the intermediate snapshot")
    parser.add_argument("--csv", type=Path, help="also write the table as CSV")
    parser.set_defaults(handler=handle_compare)
    return parser


def handle_compare(args) -> int:
    """
    Load every summary, align the snapshots and print the table.

    :raises SchemaMismatchError: naming the first file that is not a supported summary.
    """
    loaded = [(str(path), repository_reports.load_summary(path)) for path in args.summaries]
    rows = repository_reports.compare_table(loaded, args.iteration)
    print(repository_reports.format_table(rows))
    if args.csv is not None:
        repository_reports.write_csv(
            args.csv, ["source", "method", "snapshot", "iteration", "cost", "mean", "std"],
            ([r.source, r.method, r.snapshot, r.iteration, r.cost, r.mean, r.std] for r in rows))
        logger.info("wrote %s", args.csv)
    return 0

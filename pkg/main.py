import argparse
import logging
import sys

from src.conf.config import settings
from src.errors import ConfigError, MfuqError
from src.routes import reports, runs

logger = logging.getLogger("mfuq")


def build_parser() -> argparse.ArgumentParser:
    """
    Application parser with the ``run`` and ``compare`` commands registered.
    """
    parser = argparse.ArgumentParser(prog="mfuq", description="Multi-fidelity forward UQ with MISC and SRBF")
    subparsers = parser.add_subparsers(dest="command", required=True)
    # Register the command modules the way routers are included in an application
    runs.register(subparsers)
    reports.register(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    """
    Parse the command line and dispatch.

    :return: 0 on success, 1 on an engine or model failure, 2 on a configuration error.
    :rtype: int
    """
    logging.basicConfig(level=settings.log_level.upper(),
                        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as err:
        logger.error("configuration error: %s", err)
        return 2
    except MfuqError as err:
        logger.error("%s: %s", type(err).__name__, err)
        return 1


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
# melodyflow.py
# Command-line entry point: corpus, train, sample, eval, report.

import os
import sys

# --------------------------------------------------
# Path setup
# --------------------------------------------------
BASE_DIR = os.path.dirname(os.path.abspath(__file__))
if BASE_DIR not in sys.path:
    sys.path.insert(0, BASE_DIR)

import argparse
import logging

from config import configure_logging
from errors import MelodyFlowError

log = logging.getLogger("melodyflow")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_IO = 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="melodyflow",
        description="Melody-conditioned flow-matching singing synthesis on a synthetic corpus.",
    )
    parser.add_argument("--log-level", help="overrides MELODYFLOW_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # --------------------------------------------------
    # Command registration helper
    # --------------------------------------------------
    def register(module, name):
        module.register(subparsers)
        log.debug("[OK] Registered %s", name)

    # ORDER PRESERVED (shown in --help)
    from commands import corpus
    register(corpus, "commands.corpus")

    from commands import train
    register(train, "commands.train")

    from commands import sample
    register(sample, "commands.sample")

    from commands import evaluate
    register(evaluate, "commands.evaluate")

    from commands import report
    register(report, "commands.report")

    return parser


def _one_line(exc):
    return " ".join(str(exc).split())


def run(argv=None):
    """
    Exit codes: 0 ok, 1 MelodyFlowError, 2 usage, 3 missing input file.
    Failures print exactly one `error: <category>: <message>` line.
    """
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    if args.log_level:
        configure_logging(args.log_level)

    try:
        return args.func(args) or EXIT_OK
    except FileNotFoundError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return EXIT_IO
    except MelodyFlowError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(run())

"""Provide main entrypoint."""
import asyncio
import json
import logging
import sys

import yaml
from pydantic import ValidationError  # pylint: disable=no-name-in-module

from mgrl.config import load_config
from mgrl.core import (
    ConfigurationError,
    ConvergenceError,
    MdpFormatError,
    NumericalError,
)
from mgrl.mdpfile import load_mdp
from mgrl.options import parse_cmd_line
from mgrl.runner import run_to_directory, sweep
from mgrl.verify import build_report, run_suite

logging.basicConfig(stream=sys.stdout)
logger = logging.getLogger("main")
logger.setLevel(logging.INFO)

LOGGERS = (
    "core",
    "mdp",
    "envs",
    "oracle",
    "tabular",
    "approx",
    "runner",
    "verify",
    "main",
)
EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


def cmd_verify(opt):
    """Run a verification suite and report every check."""
    checks = run_suite(opt.suite, opt.tol)
    for check in checks:
        print(check.line())
    report = build_report(opt.suite, checks)
    if opt.json:
        with open(opt.json, "w", encoding="utf-8") as fil:
            json.dump(report, fil, indent=2)
            fil.write("\n")
    failed = sum(not check.passed for check in checks)
    print(f"{len(checks) - failed} passed, {failed} failed")
    return EXIT_OK if report["passed"] else EXIT_FAILED


def cmd_run(opt):
    """Run one experiment."""
    csv_path, json_path = run_to_directory(load_config(opt.config), opt.out)
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_sweep(opt):
    """Run one experiment per seed."""
    report = asyncio.run(sweep(load_config(opt.config), opt.seeds, opt.out))
    for row in report["metrics"]:
        print(f"{row['metric']}: {row['mean']!r} +- {row['std']!r}")
    return EXIT_OK


def cmd_mdp(opt):
    """Validate an MDP file."""
    mdp = load_mdp(opt.file)
    print(f"{opt.file}: {mdp.shape_summary()}")
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "run": cmd_run, "sweep": cmd_sweep, "mdp": cmd_mdp}


def main(args=None):
    """Run main."""
    opt = parse_cmd_line(args)
    if opt.debug:
        for name in LOGGERS:
            logging.getLogger(name).setLevel(logging.DEBUG)
    try:
        return COMMANDS[opt.command](opt)
    except (ConfigurationError, MdpFormatError, ValidationError, yaml.YAMLError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, ConvergenceError) as err:
        logger.error("run aborted: %s", err)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

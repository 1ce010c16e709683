"""Provide the command line options."""
import argparse

from mgrl import __version__
from mgrl.verify import SUITE_IDS


def parse_seeds(value):
    """Parse a comma separated list of integer seeds."""
    try:
        seeds = [int(item) for item in value.split(",") if item.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"invalid seed list '{value}'") from err
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def build_parser():
    """Return the argument parser with all sub-commands."""
    parser = argparse.ArgumentParser(
        prog="mgrl", description="multi-goal reinforcement learning lab"
    )
    parser.add_argument("--debug", action="store_true", help="debug mode")
    parser.add_argument(
        "-v", "--version", action="version", version="%(prog)s " + __version__
    )
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify", help="run a verification suite")
    verify.add_argument("suite", choices=SUITE_IDS, help="suite to run")
    verify.add_argument(
        "--tol", type=float, default=None, help="replace every tolerance of the suite"
    )
    verify.add_argument(
        "--json", type=str, default=None, help="write the JSON report to this path"
    )

    run = commands.add_parser("run", help="run one experiment from a config file")
    run.add_argument("config", type=str, help="YAML experiment config")
    run.add_argument("--out", type=str, default=None, help="output directory")

    sweep = commands.add_parser("sweep", help="run one experiment for several seeds")
    sweep.add_argument("config", type=str, help="YAML experiment config")
    sweep.add_argument(
        "--seeds", type=parse_seeds, required=True, help="comma separated seeds"
    )
    sweep.add_argument("--out", type=str, default=None, help="output directory")

    mdp = commands.add_parser("mdp", help="MDP file utilities")
    mdp_commands = mdp.add_subparsers(dest="mdp_command", required=True)
    validate = mdp_commands.add_parser("validate", help="validate an MDP file")
    validate.add_argument("file", type=str, help="MDP file")
    return parser


def parse_cmd_line(args=None):
    """Parse the command line options."""
    return build_parser().parse_args(args=args)

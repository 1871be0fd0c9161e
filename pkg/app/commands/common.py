"""Options shared by every subcommand."""

import argparse
from pathlib import Path


def common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument(
        "--seed", type=int, default=None, help="seed for all randomness (default 0)"
    )
    parent.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    return parent


def add_config_option(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration; flags override it")


def seed_of(args: argparse.Namespace) -> int:
    return 0 if args.seed is None else args.seed


AXES = ("x", "y", "z")

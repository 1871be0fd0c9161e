import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

# Add the app directory to Python path (needed when run from elsewhere)
app_dir = Path(__file__).parent
if str(app_dir) not in sys.path:
    sys.path.insert(0, str(app_dir))

from commands import dataset, embed, pretrain, probes  # noqa: E402
from services.errors import ShapeFieldError  # noqa: E402
from services.formats import staged_outputs  # noqa: E402

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

COMMAND_GROUPS = (pretrain, embed, probes, dataset)


class CLIArgumentParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> CLIArgumentParser:
    parser = CLIArgumentParser(
        prog="shape-fields",
        description="Learn, inspect and apply representation-agnostic shape fields.",
    )
    subparsers = parser.add_subparsers(
        dest="command", required=True, parser_class=CLIArgumentParser
    )
    for group in COMMAND_GROUPS:
        group.register(subparsers)
    return parser


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand. 0 on success, 1 on usage errors, 2 on data or format
    errors. Output files are committed only when the command succeeds.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        with staged_outputs():
            return args.handler(args)
    except SystemExit as e:
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE
    except (ShapeFieldError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(cli_dispatch())

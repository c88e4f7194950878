"""Entry point of the ``dcgnet`` command.

Every failure ends with exactly one JSON line on stderr::

    {"error": "missing_input", "message": "input not found: spec.json"}

and the exit code of the error class (2 usage or missing input, 3 aborted
training, 1 otherwise).
"""

import argparse
import json
import sys
from collections.abc import Sequence
from typing import NoReturn

import structlog

from services import __version__
from services.cli.commands import COMMANDS, CommandRegistry
from services.config import settings
from services.errors import DCGNetError, UsageError
from services.logging import configure_logging

logger = structlog.get_logger(__name__)


class CommandParser(argparse.ArgumentParser):
    """Argument parser that raises instead of printing usage and exiting."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def build_registry() -> CommandRegistry:
    registry = CommandRegistry()
    for command in COMMANDS:
        registry.register(command())
    return registry


def build_parser(registry: CommandRegistry) -> CommandParser:
    parser = CommandParser(prog="dcgnet", description="Concept-graph diagnosis toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in registry.list_commands():
        command = registry.commands[name]
        command.add_arguments(subparsers.add_parser(name, help=command.help))
    return parser


def report_error(code: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging(settings.log_level, settings.log_format)
    registry = build_registry()
    try:
        args = build_parser(registry).parse_args(argv)
        return registry.execute_command(args.command, args)
    except DCGNetError as err:
        report_error(err.code, str(err))
        return err.exit_code
    except Exception as err:
        logger.exception("Unexpected error")
        report_error("internal_error", str(err))
        return 1


if __name__ == "__main__":
    sys.exit(main())

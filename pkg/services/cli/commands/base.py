"""Base command class and the registry the CLI dispatches through."""

import argparse
from abc import ABC, abstractmethod
from typing import Any

import structlog

logger = structlog.get_logger(__name__)


class BaseCommand(ABC):
    """Base class for every ``dcgnet`` subcommand."""

    name: str = ""
    help: str = ""

    def __init__(self) -> None:
        """Bind a logger to the command name."""
        if not self.name:
            raise TypeError(f"{type(self).__name__} must set a command name")
        self.logger = logger.bind(command=self.name)

    @abstractmethod
    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        """Declare the command's flags."""

    @abstractmethod
    def execute(self, args: argparse.Namespace) -> int:
        """Run the command; returns the process exit code."""

    def log_execution(self, args: argparse.Namespace) -> None:
        """Log command start with the options that were given."""
        self.logger.info("Command started", options=sorted(_given(args)))

    def log_completion(self, code: int) -> None:
        """Log command completion."""
        self.logger.info("Command completed", exit_code=code)

    def log_error(self, error: Exception) -> None:
        """Log command failure."""
        self.logger.error("Command failed", error=str(error), error_type=type(error).__name__)

    def run(self, args: argparse.Namespace) -> int:
        """Run the command with logging around it; errors propagate."""
        try:
            self.log_execution(args)
            code = self.execute(args)
            self.log_completion(code)
            return code
        except Exception as e:
            self.log_error(e)
            raise


def _given(args: argparse.Namespace) -> dict[str, Any]:
    return {
        key: value
        for key, value in vars(args).items()
        if value is not None and key != "command"
    }


class CommandRegistry:
    """Registry of command instances keyed by name."""

    def __init__(self) -> None:
        """Initialize an empty registry."""
        self.commands: dict[str, BaseCommand] = {}

    def register(self, command: BaseCommand) -> None:
        """Register a command under its name."""
        if command.name in self.commands:
            raise ValueError(f"Command '{command.name}' already registered")
        self.commands[command.name] = command
        logger.debug("Command registered", command_name=command.name)

    def get(self, name: str) -> BaseCommand | None:
        """Get a command by name."""
        return self.commands.get(name)

    def list_commands(self) -> list[str]:
        """List registered command names in registration order."""
        return list(self.commands.keys())

    def execute_command(self, name: str, args: argparse.Namespace) -> int:
        """Run a registered command by name."""
        command = self.get(name)
        if not command:
            raise ValueError(f"Command '{name}' not found")
        return command.run(args)

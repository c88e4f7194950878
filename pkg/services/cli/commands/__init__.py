"""Subcommands of the ``dcgnet`` command line."""

from services.cli.commands.base import BaseCommand, CommandRegistry
from services.cli.commands.evaluate import EvalCommand
from services.cli.commands.explain import ExplainCommand
from services.cli.commands.gradcheck import GradCheckCommand
from services.cli.commands.graph import GraphCommand
from services.cli.commands.synth import SynthCommand
from services.cli.commands.train import TrainCommand

COMMANDS: list[type[BaseCommand]] = [
    SynthCommand,
    TrainCommand,
    EvalCommand,
    ExplainCommand,
    GraphCommand,
    GradCheckCommand,
]

__all__ = [
    "COMMANDS",
    "BaseCommand",
    "CommandRegistry",
    "EvalCommand",
    "ExplainCommand",
    "GradCheckCommand",
    "GraphCommand",
    "SynthCommand",
    "TrainCommand",
]

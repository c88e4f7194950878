"""``dcgnet explain``: per-sample explanation reports."""

import argparse
import sys

from services.checkpoint import load_checkpoint
from services.cli.commands.base import BaseCommand
from services.config import settings
from services.explain import explain_samples, render_pretty, render_records
from services.io import atomic_write_text
from synthdata.records import read_dataset


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


class ExplainCommand(BaseCommand):
    name = "explain"
    help = "Export explanation reports for selected samples"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--checkpoint", required=True, help="Checkpoint file")
        parser.add_argument("--data", required=True, help="Dataset directory")
        parser.add_argument("--samples", required=True, nargs="+", help="Sample ids")
        parser.add_argument(
            "--top-n", type=positive_int, default=5, help="Concepts shown in panels B and C"
        )
        parser.add_argument("--format", choices=("records", "pretty"), default="records")
        parser.add_argument("--out", help="Write reports to this file instead of stdout")

    def execute(self, args: argparse.Namespace) -> int:
        dataset = read_dataset(args.data)
        checkpoint = load_checkpoint(args.checkpoint, expected_dictionary=dataset.dictionary)
        reports = explain_samples(
            checkpoint.model,
            dataset,
            args.samples,
            top_n=args.top_n,
            edges_per_node=settings.explain_edges_per_node,
            patches_per_node=settings.explain_patches_per_node,
        )
        if args.format == "pretty":
            text = "\n".join(render_pretty(report) for report in reports)
        else:
            text = render_records(reports)
        if args.out:
            atomic_write_text(args.out, text)
        else:
            sys.stdout.write(text)
        return 0

"""``dcgnet eval``: diagnosis and concept metrics of a checkpoint on one split.

The report also carries the training-split label counts stored in the
checkpoint, so class balance can be read without the training split.
"""

import argparse
import json

from services.checkpoint import load_checkpoint
from services.cli.commands.base import BaseCommand
from services.config import settings
from services.io import atomic_write_text
from services.training import evaluate
from synthdata.records import SPLIT_NAMES, read_dataset


class EvalCommand(BaseCommand):
    name = "eval"
    help = "Evaluate a checkpoint on a dataset split"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--checkpoint", required=True, help="Checkpoint file")
        parser.add_argument("--data", required=True, help="Dataset directory")
        parser.add_argument("--split", choices=SPLIT_NAMES, default="test")
        parser.add_argument("--out", help="Also write the metrics to this JSON file")

    def execute(self, args: argparse.Namespace) -> int:
        dataset = read_dataset(args.data)
        checkpoint = load_checkpoint(args.checkpoint, expected_dictionary=dataset.dictionary)
        metrics = evaluate(checkpoint.model, dataset.splits[args.split], settings.eval_batch_size)
        payload = {
            "split": args.split,
            **metrics.model_dump(),
            "train_diagnosis_counts": checkpoint.meta.diagnosis_counts,
            "train_concept_counts": checkpoint.meta.concept_counts,
        }
        text = json.dumps(payload, sort_keys=True)
        if args.out:
            atomic_write_text(args.out, text + "\n")
        print(text)
        return 0

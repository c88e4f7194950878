"""``dcgnet synth``: generate a synthetic dataset directory."""

import argparse
import json

from models.schema import load_schema
from services.cli.commands.base import BaseCommand
from services.errors import SchemaError
from synthdata.generator import generate
from synthdata.records import write_dataset
from synthdata.spec import SyntheticSpec, load_synthetic_spec


class SynthCommand(BaseCommand):
    name = "synth"
    help = "Generate a synthetic concept-annotated dataset"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument(
            "--spec", help="Generator spec file (JSON); defaults apply when omitted"
        )
        parser.add_argument("--schema", help="Concept schema file naming concepts and values")
        parser.add_argument("--out", required=True, help="Dataset directory to write")
        parser.add_argument("--seed", type=int, help="Override the spec's master seed")

    def execute(self, args: argparse.Namespace) -> int:
        spec = load_synthetic_spec(args.spec) if args.spec else SyntheticSpec()
        if args.schema:
            dictionary = load_schema(args.schema)
            if dictionary.value_counts != spec.concept_values:
                raise SchemaError(
                    f"{args.schema}: value counts {dictionary.value_counts} do not match "
                    f"concept_values {spec.concept_values}"
                )
            spec = spec.model_copy(update={"dictionary": dictionary})
        if args.seed is not None:
            spec = spec.model_copy(update={"seed": args.seed})
        dataset = generate(spec)
        path = write_dataset(dataset, args.out)
        manifest = dataset.manifest()
        summary = {
            "path": str(path),
            "splits": manifest.splits,
            "concepts": manifest.dictionary.value_counts,
            "n_classes": manifest.n_classes,
            "bayes_accuracy": manifest.bayes_accuracy,
        }
        print(json.dumps(summary, sort_keys=True))
        return 0

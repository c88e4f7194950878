"""``dcgnet gradcheck``: finite-difference self-test of the tensor engine."""

import argparse

from services.cli.commands.base import BaseCommand
from services.errors import GradientCheckFailed
from services.gradcheck import run_gradchecks


class GradCheckCommand(BaseCommand):
    name = "gradcheck"
    help = "Compare reverse-mode gradients with central finite differences"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--op", help="Run a single suite (an operation name or 'composite')")
        parser.add_argument("--seed", type=int, default=0, help="Seed of the random inputs")
        parser.add_argument(
            "--corrupt",
            action="store_true",
            help="Perturb one analytic gradient entry (the check must then fail)",
        )

    def execute(self, args: argparse.Namespace) -> int:
        results = run_gradchecks(op=args.op, corrupt=args.corrupt, seed=args.seed)
        for result in results:
            print(result.model_dump_json())
        failed = [result for result in results if not result.passed]
        if failed:
            worst = max(failed, key=lambda result: result.max_error)
            raise GradientCheckFailed(
                f"{len(failed)} of {len(results)} checks failed; worst {worst.name} "
                f"at {worst.location} (relative error {worst.max_error:.3e})"
            )
        return 0

"""``dcgnet train``: fit a model, keep the best-validation checkpoint.

Output directory layout of one run::

    model.ckpt        best-validation checkpoint
    train_log.jsonl   one record per step and per epoch
    metrics.json      best epoch, validation and test metrics

With ``--seeds`` every seed gets its own ``seed_<n>/`` run directory and a
``summary.json`` aggregates the test metrics (mean and population std).
"""

import argparse
import json
from pathlib import Path
from typing import Any

import numpy as np

from models.dcgnet import DCGNetModel, build_model
from services.checkpoint import CheckpointMeta, save_checkpoint
from services.cli.commands.base import BaseCommand
from services.config import RunConfig, load_run_config, settings
from services.errors import DatasetError, TrainingAborted
from services.io import atomic_write_text
from services.training import METRIC_NAMES, evaluate, label_counts, train
from synthdata.records import Dataset, read_dataset

CHECKPOINT_NAME = "model.ckpt"
LOG_NAME = "train_log.jsonl"
METRICS_NAME = "metrics.json"
SUMMARY_NAME = "summary.json"


def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if not seeds or len(set(seeds)) != len(seeds):
        raise argparse.ArgumentTypeError("seeds must be a non-empty list of distinct integers")
    return seeds


def _dump(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _log_text(records: list[dict]) -> str:
    return "".join(json.dumps(record) + "\n" for record in records)


def checkpoint_meta(
    model: DCGNetModel,
    dataset: Dataset,
    seed: int,
    epoch: int | None = None,
    val_macro_f1: float | None = None,
) -> CheckpointMeta:
    diagnosis, concepts = label_counts(
        dataset.train, dataset.n_classes, dataset.dictionary.value_counts
    )
    return CheckpointMeta(
        dictionary=dataset.dictionary,
        model=model.config,
        d_in=model.d_in,
        n_classes=model.n_classes,
        seed=seed,
        diagnosis_counts=[int(c) for c in diagnosis],
        concept_counts=[[int(c) for c in counts] for counts in concepts],
        epoch=epoch,
        val_macro_f1=val_macro_f1,
    )


def train_run(dataset: Dataset, config: RunConfig, out: Path) -> dict[str, Any]:
    """Train one seed into ``out``; returns its metrics record.

    On an aborted run the last good state is still checkpointed together with
    the log collected so far before the error propagates.
    """
    init_seed = config.model.init_seed
    if init_seed is None:
        init_seed = config.train.seed
    _, patch_width = dataset.patch_shape
    model = build_model(
        dataset.dictionary,
        dataset.train.concepts,
        config.model,
        d_in=patch_width,
        n_classes=dataset.n_classes,
        seed=init_seed,
    )
    try:
        result = train(model, dataset, config.train, eval_batch_size=settings.eval_batch_size)
    except TrainingAborted as err:
        model.load_state_dict(err.last_good)
        epoch = err.last_good_epoch or None
        save_checkpoint(
            out / CHECKPOINT_NAME, model, checkpoint_meta(model, dataset, init_seed, epoch)
        )
        atomic_write_text(out / LOG_NAME, _log_text(err.records))
        raise

    assert result.best_val is not None
    meta = checkpoint_meta(
        model, dataset, init_seed, result.best_epoch, result.best_val.diagnosis_f1
    )
    save_checkpoint(out / CHECKPOINT_NAME, model, meta)
    atomic_write_text(out / LOG_NAME, _log_text(result.records))
    metrics: dict[str, Any] = {
        "seed": config.train.seed,
        "best_epoch": result.best_epoch,
        "val": result.best_val.model_dump(),
        "test": None,
    }
    if len(dataset.test) > 0:
        metrics["test"] = evaluate(model, dataset.test, settings.eval_batch_size).model_dump()
    atomic_write_text(out / METRICS_NAME, _dump(metrics))
    return metrics


def summarize(runs: list[dict[str, Any]]) -> dict[str, Any]:
    """Mean and population standard deviation of every test metric."""
    summary: dict[str, Any] = {"seeds": [run["seed"] for run in runs], "test": {}}
    for name in METRIC_NAMES:
        values = np.array([run["test"][name] for run in runs])
        summary["test"][name] = {"mean": float(values.mean()), "std": float(values.std())}
    return summary


class TrainCommand(BaseCommand):
    name = "train"
    help = "Train a model and write the best-validation checkpoint"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", required=True, help="Dataset directory")
        parser.add_argument("--config", help="Run config file (JSON); defaults apply when omitted")
        parser.add_argument("--out", required=True, help="Output directory")
        seeds = parser.add_mutually_exclusive_group()
        seeds.add_argument("--seed", type=int, help="Override the training seed")
        seeds.add_argument(
            "--seeds", type=parse_seeds, help="Comma-separated seeds for a multi-seed sweep"
        )

    def execute(self, args: argparse.Namespace) -> int:
        config = load_run_config(args.config) if args.config else RunConfig()
        dataset = read_dataset(args.data)
        out = Path(args.out)

        if args.seeds is None:
            if args.seed is not None:
                config = _with_seed(config, args.seed)
            metrics = train_run(dataset, config, out)
            print(json.dumps(metrics, sort_keys=True))
            return 0

        if len(dataset.test) == 0:
            raise DatasetError("a seed sweep reports test metrics; the test split is empty")
        runs = []
        for seed in args.seeds:
            self.logger.info("Seed run started", seed=seed)
            runs.append(train_run(dataset, _with_seed(config, seed), out / f"seed_{seed}"))
        summary = summarize(runs)
        atomic_write_text(out / SUMMARY_NAME, _dump(summary))
        print(json.dumps(summary, sort_keys=True))
        return 0


def _with_seed(config: RunConfig, seed: int) -> RunConfig:
    return config.model_copy(update={"train": config.train.model_copy(update={"seed": seed})})

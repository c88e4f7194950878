"""End-to-end learning and ablation checks on the shipped synthetic configs.

These train full-size models and are excluded from the default run; use
``pytest -m slow`` to run them.
"""

from pathlib import Path

import numpy as np
import pytest

from models.dcgnet import build_model
from models.graph import build_ppmi
from services.checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from services.config import load_run_config
from services.training import evaluate, train
from synthdata.generator import generate
from synthdata.spec import SyntheticSpec, load_synthetic_spec

pytestmark = [pytest.mark.integration, pytest.mark.slow]

CONFIGS = Path(__file__).resolve().parents[2] / "configs"
SEEDS = (1, 2, 3)
# Finite-sample slack for the directional ablation comparisons.
ABLATION_SLACK = 0.02


def fit(dataset, run_config, seed):
    model_config = run_config.model
    train_config = run_config.train.model_copy(update={"seed": seed})
    model = build_model(
        dataset.dictionary,
        dataset.train.concepts,
        model_config,
        d_in=dataset.patch_shape[1],
        n_classes=dataset.n_classes,
        seed=seed,
    )
    train(model, dataset, train_config)
    return evaluate(model, dataset.test)


@pytest.fixture(scope="module")
def default_dataset():
    return generate(load_synthetic_spec(CONFIGS / "default_synthetic.json"))


@pytest.fixture(scope="module")
def correlated_dataset():
    return generate(load_synthetic_spec(CONFIGS / "correlated_synthetic.json"))


@pytest.fixture(scope="module")
def run_config():
    return load_run_config(CONFIGS / "default.json")


class TestEndToEnd:
    """Test that the default task is learned."""

    def test_dataset_is_learnable(self, default_dataset):
        assert default_dataset.bayes_accuracy >= 0.99

    @pytest.mark.parametrize("seed", SEEDS)
    def test_reaches_target_accuracy(self, default_dataset, run_config, seed):
        metrics = fit(default_dataset, run_config, seed)
        assert metrics.diagnosis_accuracy >= 0.95
        assert metrics.concept_accuracy >= 0.90

    def test_untrained_model_is_at_chance(self, tmp_path, run_config):
        """A freshly initialised model predicts near 1 / C on balanced data."""
        spec = SyntheticSpec(split_sizes=(400, 100, 2000), seed=5)
        dataset = generate(spec)
        model = build_model(
            dataset.dictionary,
            dataset.train.concepts,
            run_config.model,
            d_in=dataset.patch_shape[1],
            n_classes=dataset.n_classes,
            seed=1,
        )
        meta = CheckpointMeta(
            dictionary=dataset.dictionary,
            model=run_config.model,
            d_in=model.d_in,
            n_classes=model.n_classes,
            seed=1,
            diagnosis_counts=[0] * dataset.n_classes,
            concept_counts=[[0] * count for count in dataset.dictionary.value_counts],
        )
        path = save_checkpoint(tmp_path / "model.ckpt", model, meta)
        loaded = load_checkpoint(path, dataset.dictionary).model
        accuracy = evaluate(loaded, dataset.test).diagnosis_accuracy
        assert abs(accuracy - 0.25) <= 0.1


class TestAblations:
    """Test the direction of the graph and prompt-ensemble ablations."""

    def test_graph_does_not_hurt(self, correlated_dataset, run_config):
        no_graph = run_config.model_copy(
            update={"model": run_config.model.model_copy(update={"use_graph": False})}
        )
        full = np.mean([fit(correlated_dataset, run_config, s).diagnosis_accuracy for s in SEEDS])
        ablated = np.mean([fit(correlated_dataset, no_graph, s).diagnosis_accuracy for s in SEEDS])
        assert full >= ablated - ABLATION_SLACK

    def test_prompt_ensemble_does_not_hurt(self, correlated_dataset, run_config):
        single = run_config.model_copy(
            update={"model": run_config.model.model_copy(update={"prompt_ensemble": False})}
        )
        full = np.mean([fit(correlated_dataset, run_config, s).concept_f1 for s in SEEDS])
        ablated = np.mean([fit(correlated_dataset, single, s).concept_f1 for s in SEEDS])
        assert ablated <= full + ABLATION_SLACK


class TestCorrelatedPrior:
    """Test that fully correlated data puts the aligned pairs on top."""

    def test_aligned_edges_dominate(self):
        row = [1.0 / 3.0] * 3
        spec = SyntheticSpec(
            n_classes=3,
            concept_values=[3, 3],
            class_tables=[[row, row] for _ in range(3)],
            correlation=1.0,
            patch_count=2,
            patch_width=4,
            split_sizes=(600, 50, 50),
        )
        dataset = generate(spec)
        prior = build_ppmi(dataset.train.concepts, dataset.dictionary).matrix
        for m in range(3):
            assert int(np.argmax(prior[m])) == 3 + m
            assert int(np.argmax(prior[3 + m])) == m

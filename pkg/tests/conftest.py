"""Pytest configuration and common fixtures."""

import json
from pathlib import Path

import numpy as np
import pytest

from models.dcgnet import DCGNetModel, build_model
from models.schema import ConceptDictionary, ConceptSpec
from services.config import ModelConfig, RunConfig, TrainConfig
from synthdata.generator import generate
from synthdata.records import Dataset, write_dataset
from synthdata.spec import SyntheticSpec


@pytest.fixture
def dictionary() -> ConceptDictionary:
    """Two concepts with two and three values (five nodes)."""
    return ConceptDictionary(
        concepts=[
            ConceptSpec(name="size", values=["small", "large"], synonyms={"large": ["big"]}),
            ConceptSpec(name="shape", values=["round", "oval", "irregular"]),
        ],
        templates=["a cell that is {}", "an image of {}"],
    )


@pytest.fixture
def tiny_spec() -> SyntheticSpec:
    """Small, fast synthetic spec (100 samples, 4 patches of width 6)."""
    return SyntheticSpec(
        n_classes=3,
        concept_values=[2, 3],
        purity=0.9,
        correlation=0.5,
        patch_count=4,
        patch_width=6,
        noise=0.2,
        split_sizes=(60, 20, 20),
        seed=3,
    )


@pytest.fixture
def tiny_dataset(tiny_spec: SyntheticSpec) -> Dataset:
    return generate(tiny_spec)


@pytest.fixture
def dataset_dir(tmp_path: Path, tiny_dataset: Dataset) -> Path:
    """The tiny dataset written to disk."""
    return write_dataset(tiny_dataset, tmp_path / "data")


@pytest.fixture
def model_config() -> ModelConfig:
    return ModelConfig(d_t=16, d_v=8, heads=2, graph_layers=1, k_top=2)


@pytest.fixture
def train_config() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=16, seed=1)


@pytest.fixture
def tiny_model(tiny_dataset: Dataset, model_config: ModelConfig) -> DCGNetModel:
    """Untrained model sized for the tiny dataset."""
    return build_model(
        tiny_dataset.dictionary,
        tiny_dataset.train.concepts,
        model_config,
        d_in=tiny_dataset.patch_shape[1],
        n_classes=tiny_dataset.n_classes,
        seed=1,
    )


@pytest.fixture
def run_config_file(tmp_path: Path, model_config: ModelConfig, train_config: TrainConfig) -> Path:
    """Smoke run config on disk."""
    path = tmp_path / "run.json"
    config = RunConfig(model=model_config, train=train_config)
    path.write_text(json.dumps(config.model_dump(mode="json")), encoding="utf-8")
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def pytest_configure(config):
    """Configure pytest."""
    config.addinivalue_line("markers", "unit: Unit tests")
    config.addinivalue_line("markers", "integration: Integration tests")
    config.addinivalue_line("markers", "security: Security tests")
    config.addinivalue_line("markers", "slow: Slow running tests")

"""On-disk dataset format.

A dataset directory holds ``manifest.json`` and one ``<split>.records`` file
per split. Each records file has one compact JSON object per line::

    {"id":"s000017","y":2,"concepts":[1,0,2,1,0],"patches":[[0.12,-1.3,...],...]}

Floats are written with Python's shortest round-trip representation, so a
write followed by a read reproduces every value bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from models.schema import ConceptDictionary
from services.errors import DatasetError, MissingInputError
from services.io import atomic_directory
from synthdata.spec import SyntheticSpec

logger = structlog.get_logger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
SPLIT_NAMES = ("train", "val", "test")


def sample_id(index: int) -> str:
    return f"s{index:06d}"


class SampleRecord(BaseModel):
    """One labelled sample as stored on disk."""

    model_config = ConfigDict(extra="forbid")

    id: str = Field(..., min_length=1, examples=["s000017"])
    y: int = Field(..., ge=0, description="Diagnosis class")
    concepts: list[int] = Field(..., min_length=1, description="Value index per concept")
    patches: list[list[float]] = Field(..., min_length=1, description="P x d_in raw floats")

    @field_validator("patches")
    @classmethod
    def validate_patches(cls, v: list[list[float]]) -> list[list[float]]:
        """Patch rows share one width and hold finite values."""
        widths = {len(row) for row in v}
        if len(widths) != 1 or 0 in widths:
            raise ValueError("patch rows must be non-empty and share one width")
        if not all(math.isfinite(x) for row in v for x in row):
            raise ValueError("patches must be finite")
        return v


class Manifest(BaseModel):
    """Dataset-level metadata."""

    model_config = ConfigDict(extra="forbid")

    format_version: int = FORMAT_VERSION
    dictionary: ConceptDictionary
    n_classes: int = Field(..., ge=2)
    patch_count: int = Field(..., ge=1)
    patch_width: int = Field(..., ge=1)
    splits: dict[str, int] = Field(..., description="Record count per split")
    bayes_accuracy: float | None = Field(
        None, description="Bayes-optimal diagnosis accuracy from concept labels"
    )
    spec: dict[str, Any] | None = Field(None, description="Generator parameters, if synthetic")


@dataclass
class DatasetSplit:
    """Column-oriented view of one split."""

    ids: list[str]
    patches: np.ndarray
    concepts: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, index: np.ndarray | list[int]) -> DatasetSplit:
        index = np.asarray(index, dtype=np.int64)
        return DatasetSplit(
            ids=[self.ids[i] for i in index],
            patches=self.patches[index],
            concepts=self.concepts[index],
            labels=self.labels[index],
        )

    def position(self, sample: str) -> int:
        try:
            return self.ids.index(sample)
        except ValueError:
            raise DatasetError(f"sample {sample!r} not found") from None


@dataclass
class Dataset:
    dictionary: ConceptDictionary
    n_classes: int
    splits: dict[str, DatasetSplit]
    spec: SyntheticSpec | None = None
    bayes_accuracy: float | None = None

    @property
    def train(self) -> DatasetSplit:
        return self.splits["train"]

    @property
    def val(self) -> DatasetSplit:
        return self.splits["val"]

    @property
    def test(self) -> DatasetSplit:
        return self.splits["test"]

    @property
    def patch_shape(self) -> tuple[int, int]:
        patches = self.train.patches
        return int(patches.shape[1]), int(patches.shape[2])

    def find(self, sample: str) -> tuple[str, int]:
        """Split name and row of a sample id."""
        for name, split in self.splits.items():
            if sample in split.ids:
                return name, split.ids.index(sample)
        raise DatasetError(f"sample {sample!r} not found in any split")

    def manifest(self) -> Manifest:
        patch_count, patch_width = self.patch_shape
        return Manifest(
            dictionary=self.dictionary,
            n_classes=self.n_classes,
            patch_count=patch_count,
            patch_width=patch_width,
            splits={name: len(split) for name, split in self.splits.items()},
            bayes_accuracy=self.bayes_accuracy,
            spec=self.spec.model_dump(mode="json") if self.spec is not None else None,
        )


def _record_line(split: DatasetSplit, row: int) -> str:
    payload = {
        "id": split.ids[row],
        "y": int(split.labels[row]),
        "concepts": [int(a) for a in split.concepts[row]],
        "patches": split.patches[row].tolist(),
    }
    return json.dumps(payload, separators=(",", ":"))


def write_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write the manifest and every split into ``path`` atomically."""
    path = Path(path)
    with atomic_directory(path) as staging:
        manifest = dataset.manifest()
        (staging / MANIFEST_NAME).write_text(
            json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        for name, split in dataset.splits.items():
            lines = [_record_line(split, row) for row in range(len(split))]
            body = "\n".join(lines) + ("\n" if lines else "")
            (staging / f"{name}.records").write_text(body, encoding="utf-8")
    logger.info("Dataset written", path=str(path), splits=manifest.splits)
    return path


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingInputError(manifest_path)
    try:
        manifest = Manifest.model_validate_json(manifest_path.read_text(encoding="utf-8"))
    except ValidationError as err:
        raise DatasetError(f"{manifest_path}: {err}") from err
    if manifest.format_version != FORMAT_VERSION:
        raise DatasetError(
            f"{manifest_path}: format version {manifest.format_version}, expected {FORMAT_VERSION}"
        )
    return manifest


def _read_split(path: Path, name: str, manifest: Manifest) -> DatasetSplit:
    records_path = path / f"{name}.records"
    if not records_path.is_file():
        raise MissingInputError(records_path)
    counts = manifest.dictionary.value_counts
    ids: list[str] = []
    patches: list[list[list[float]]] = []
    concepts: list[list[int]] = []
    labels: list[int] = []
    with records_path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            where = f"{name}.records line {line_no}"
            if not line.endswith("\n"):
                raise DatasetError(f"{where}: truncated record")
            try:
                record = SampleRecord.model_validate(json.loads(line))
            except (json.JSONDecodeError, ValidationError) as err:
                raise DatasetError(f"{where}: {err}") from err
            if record.y >= manifest.n_classes:
                raise DatasetError(
                    f"{where}: diagnosis {record.y} outside [0, {manifest.n_classes})"
                )
            if len(record.concepts) != len(counts) or any(
                not 0 <= a < c for a, c in zip(record.concepts, counts, strict=True)
            ):
                raise DatasetError(f"{where}: concept labels do not match the schema")
            shape = (len(record.patches), len(record.patches[0]))
            if shape != (manifest.patch_count, manifest.patch_width):
                raise DatasetError(
                    f"{where}: expected {manifest.patch_count} x {manifest.patch_width} patches"
                )
            ids.append(record.id)
            patches.append(record.patches)
            concepts.append(record.concepts)
            labels.append(record.y)
    expected = manifest.splits.get(name)
    if expected is not None and expected != len(ids):
        raise DatasetError(f"{name}.records: manifest lists {expected} records, found {len(ids)}")
    return DatasetSplit(
        ids=ids,
        patches=np.asarray(patches, dtype=np.float64).reshape(
            len(ids), manifest.patch_count, manifest.patch_width
        ),
        concepts=np.asarray(concepts, dtype=np.int64).reshape(len(ids), len(counts)),
        labels=np.asarray(labels, dtype=np.int64),
    )


def read_dataset(path: str | Path) -> Dataset:
    """Read and validate a dataset directory.

    Raises:
        MissingInputError: If the directory, manifest or a split file is absent
        DatasetError: On a corrupt record (naming split and line), duplicate
            ids across splits or an empty train/val split
    """
    path = Path(path)
    if not path.is_dir():
        raise MissingInputError(path)
    manifest = read_manifest(path)
    splits = {name: _read_split(path, name, manifest) for name in SPLIT_NAMES}
    seen: set[str] = set()
    for name, split in splits.items():
        duplicates = seen.intersection(split.ids)
        if duplicates or len(set(split.ids)) != len(split.ids):
            raise DatasetError(f"{name}.records: duplicate sample ids")
        seen.update(split.ids)
    for name in ("train", "val"):
        if len(splits[name]) == 0:
            raise DatasetError(f"{name} split is empty")
    spec = None
    if manifest.spec is not None:
        spec = SyntheticSpec.model_validate(manifest.spec)
    return Dataset(
        dictionary=manifest.dictionary,
        n_classes=manifest.n_classes,
        splits=splits,
        spec=spec,
        bayes_accuracy=manifest.bayes_accuracy,
    )

"""Versioned checkpoint container.

A checkpoint is a zip archive (readable with ``numpy.load``) holding
``meta.json`` plus one ``.npy`` entry per named parameter and buffer.
Entries are stored uncompressed with a fixed timestamp, so identical model
states produce identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from models.dcgnet import DCGNetModel
from models.graph import build_mask
from models.schema import ConceptDictionary, PrototypeBank
from services.config import ModelConfig
from services.errors import CheckpointError, MissingInputError
from services.io import atomic_write_bytes

logger = structlog.get_logger(__name__)

FORMAT_VERSION = 1
META_ENTRY = "meta.json"
FIXED_DATE = (1980, 1, 1, 0, 0, 0)
BUFFERS = ("bank", "prior", "mask")


class CheckpointMeta(BaseModel):
    """Everything needed to rebuild the model around the stored arrays."""

    model_config = ConfigDict(extra="forbid")

    format_version: int = FORMAT_VERSION
    schema_hash: str = Field("", description="SHA-256 of the canonical schema JSON")
    dictionary: ConceptDictionary
    model: ModelConfig
    d_in: int = Field(..., ge=1)
    n_classes: int = Field(..., ge=2)
    seed: int
    diagnosis_counts: list[int] = Field(..., description="Training-split class counts")
    concept_counts: list[list[int]] = Field(..., description="Training-split value counts")
    epoch: int | None = Field(None, description="Epoch the state was taken from")
    val_macro_f1: float | None = None
    parameters: list[str] = Field(default_factory=list)
    buffers: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def counts_match_shapes(self) -> CheckpointMeta:
        if len(self.diagnosis_counts) != self.n_classes:
            raise ValueError(
                f"{len(self.diagnosis_counts)} diagnosis counts for {self.n_classes} classes"
            )
        if [len(counts) for counts in self.concept_counts] != self.dictionary.value_counts:
            raise ValueError("concept counts do not match the schema's value counts")
        return self


@dataclass
class Checkpoint:
    model: DCGNetModel
    meta: CheckpointMeta


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=FIXED_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def _npy_bytes(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    contiguous = np.ascontiguousarray(array, dtype=np.float64)
    np.lib.format.write_array(buffer, contiguous, allow_pickle=False)
    return buffer.getvalue()


def encode_checkpoint(model: DCGNetModel, meta: CheckpointMeta) -> bytes:
    """Serialize ``model`` with ``meta``; parameter and buffer lists are filled in."""
    state = model.state_dict()
    buffers = {"bank": model.bank.raw, "prior": model.prior, "mask": _mask_of(model)}
    meta = meta.model_copy(
        update={
            "schema_hash": model.dictionary.schema_hash(),
            "parameters": list(state),
            "buffers": list(BUFFERS),
        }
    )
    archive = io.BytesIO()
    with zipfile.ZipFile(archive, "w") as zf:
        meta_json = json.dumps(meta.model_dump(mode="json"), indent=2, sort_keys=True)
        zf.writestr(_entry(META_ENTRY), meta_json.encode("utf-8"))
        for name, array in state.items():
            zf.writestr(_entry(f"params/{name}.npy"), _npy_bytes(array))
        for name in BUFFERS:
            zf.writestr(_entry(f"buffers/{name}.npy"), _npy_bytes(buffers[name]))
    return archive.getvalue()


def _mask_of(model: DCGNetModel) -> np.ndarray:
    return model.graph.mask if model.graph is not None else build_mask(model.dictionary)


def save_checkpoint(path: str | Path, model: DCGNetModel, meta: CheckpointMeta) -> Path:
    path = atomic_write_bytes(path, encode_checkpoint(model, meta))
    logger.info("Checkpoint written", path=str(path), epoch=meta.epoch)
    return path


def _read_npy(zf: zipfile.ZipFile, name: str) -> np.ndarray:
    try:
        with zf.open(name) as handle:
            return np.lib.format.read_array(io.BytesIO(handle.read()), allow_pickle=False)
    except KeyError as err:
        raise CheckpointError(f"checkpoint entry {name!r} is missing") from err
    except ValueError as err:
        raise CheckpointError(f"checkpoint entry {name!r} is unreadable ({err})") from err


def load_checkpoint(
    path: str | Path, expected_dictionary: ConceptDictionary | None = None
) -> Checkpoint:
    """Rebuild the model stored at ``path``.

    Raises:
        MissingInputError: If the file does not exist
        CheckpointError: If the file is unreadable, has another format version,
            or was trained on a different schema than ``expected_dictionary``
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(path)
    try:
        with zipfile.ZipFile(path) as zf:
            try:
                meta = CheckpointMeta.model_validate_json(zf.read(META_ENTRY))
            except (KeyError, ValidationError) as err:
                raise CheckpointError(f"{path}: invalid metadata ({err})") from err
            if meta.format_version != FORMAT_VERSION:
                raise CheckpointError(
                    f"{path}: format version {meta.format_version}, expected {FORMAT_VERSION}"
                )
            if meta.schema_hash != meta.dictionary.schema_hash():
                raise CheckpointError(f"{path}: stored schema does not match its hash")
            expected_hash = expected_dictionary.schema_hash() if expected_dictionary else None
            if expected_hash is not None and expected_hash != meta.schema_hash:
                raise CheckpointError(
                    f"{path}: checkpoint schema {meta.schema_hash[:12]} does not match "
                    f"dataset schema {expected_hash[:12]}"
                )
            bank = _read_npy(zf, "buffers/bank.npy")
            prior = _read_npy(zf, "buffers/prior.npy")
            state = {name: _read_npy(zf, f"params/{name}.npy") for name in meta.parameters}
    except zipfile.BadZipFile as err:
        raise CheckpointError(f"{path}: not a checkpoint archive") from err

    model = DCGNetModel(
        meta.dictionary,
        PrototypeBank(bank),
        prior,
        meta.model,
        meta.d_in,
        meta.n_classes,
        meta.seed,
    )
    try:
        model.load_state_dict(state)
    except ValueError as err:
        raise CheckpointError(f"{path}: {err}") from err
    logger.info("Checkpoint loaded", path=str(path), epoch=meta.epoch)
    return Checkpoint(model=model, meta=meta)

"""Hostile and malformed input tests for every file the toolkit reads."""

import io
import json
import zipfile

import numpy as np
import pytest

from models.encoders import load_embeddings, write_embeddings
from models.schema import load_schema
from services.checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from services.cli.main import main
from services.config import load_run_config
from services.errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    LoadError,
    SchemaError,
)
from synthdata.records import read_dataset
from synthdata.spec import load_synthetic_spec

pytestmark = pytest.mark.security


def replace_line(path, line_no, text):
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    lines[line_no - 1] = text + "\n"
    path.write_text("".join(lines), encoding="utf-8")


def rewrite_entry(source, target, name, data):
    """Copy a checkpoint archive, swapping the bytes of one entry."""
    with zipfile.ZipFile(source) as zin, zipfile.ZipFile(target, "w") as zout:
        for item in zin.infolist():
            payload = data if item.filename == name else zin.read(item.filename)
            zout.writestr(item, payload)
    return target


@pytest.fixture
def checkpoint_file(tmp_path, tiny_model):
    meta = CheckpointMeta(
        dictionary=tiny_model.dictionary,
        model=tiny_model.config,
        d_in=tiny_model.d_in,
        n_classes=tiny_model.n_classes,
        seed=1,
        diagnosis_counts=[20, 20, 20],
        concept_counts=[[30, 30], [20, 20, 20]],
        epoch=1,
        val_macro_f1=0.4,
    )
    return save_checkpoint(tmp_path / "model.ckpt", tiny_model, meta)


class TestSchemaFiles:
    """Test rejection of malformed concept schemas."""

    @pytest.mark.parametrize(
        "payload",
        [
            "{not json",
            "[]",
            '{"concepts": []}',
            '{"concepts": [{"name": "a", "values": ["x", "x"]}]}',
            '{"concepts": [{"name": "a", "values": ["x", "y"]}], "templates": ["no slot"]}',
            '{"concepts": [{"name": "a", "values": ["x", "y"]}], "unexpected": 1}',
        ],
    )
    def test_rejected(self, tmp_path, payload):
        path = tmp_path / "schema.json"
        path.write_text(payload, encoding="utf-8")
        with pytest.raises(SchemaError, match="schema.json"):
            load_schema(path)


class TestRunConfigFiles:
    """Test rejection of malformed run configurations."""

    @pytest.mark.parametrize(
        "payload",
        [
            "",
            '{"model": {"d_t": 16, "shell": "rm -rf /"}}',
            '{"model": {"d_v": 10, "heads": 3}}',
            '{"train": {"learning_rate": -1}}',
            '{"train": {"epochs": 0}}',
            '{"train": {"betas": [1.0, 0.9]}}',
        ],
    )
    def test_rejected(self, tmp_path, payload):
        path = tmp_path / "run.json"
        path.write_text(payload, encoding="utf-8")
        with pytest.raises(ConfigError, match="run.json"):
            load_run_config(path)


class TestSyntheticSpecFiles:
    """Test rejection of malformed generator specifications."""

    @pytest.mark.parametrize(
        "payload",
        [
            "{",
            '{"concept_values": [1]}',
            '{"split_sizes": [0, 1, 0]}',
            '{"purity": 1.5}',
        ],
    )
    def test_rejected(self, tmp_path, payload):
        path = tmp_path / "spec.json"
        path.write_text(payload, encoding="utf-8")
        with pytest.raises(ConfigError, match="spec.json"):
            load_synthetic_spec(path)


class TestEmbeddingFiles:
    """Test rejection of malformed embedding tables."""

    def test_non_finite_value(self, tmp_path):
        path = tmp_path / "emb.tsv"
        path.write_text("small\t1.0\tnan\n", encoding="utf-8")
        with pytest.raises(LoadError, match=":1: non-finite value"):
            load_embeddings(path)

    def test_duplicate_prompt(self, tmp_path):
        path = tmp_path / "emb.tsv"
        path.write_text("small\t1.0\t0.0\nsmall\t0.0\t1.0\n", encoding="utf-8")
        with pytest.raises(LoadError, match=":2: duplicate prompt"):
            load_embeddings(path)

    def test_prompt_with_newline_not_written(self, tmp_path):
        path = tmp_path / "emb.tsv"
        with pytest.raises(LoadError, match="tab or newline"):
            write_embeddings(path, [("small\nlarge\t9 9", np.ones(2))])


class TestDatasetRecords:
    """Test rejection of tampered dataset records."""

    def test_non_finite_patch(self, dataset_dir, tiny_dataset):
        record = {
            "id": tiny_dataset.train.ids[0],
            "y": 0,
            "concepts": [0, 0],
            "patches": [[float("nan")] * 6] * 4,
        }
        replace_line(dataset_dir / "train.records", 1, json.dumps(record))
        with pytest.raises(DatasetError, match="train.records line 1"):
            read_dataset(dataset_dir)

    def test_unknown_field(self, dataset_dir):
        path = dataset_dir / "val.records"
        record = json.loads(path.read_text(encoding="utf-8").splitlines()[2])
        record["extra"] = "payload"
        replace_line(path, 3, json.dumps(record))
        with pytest.raises(DatasetError, match="val.records line 3"):
            read_dataset(dataset_dir)

    def test_record_not_an_object(self, dataset_dir):
        replace_line(dataset_dir / "test.records", 4, "[1, 2, 3]")
        with pytest.raises(DatasetError, match="test.records line 4"):
            read_dataset(dataset_dir)

    def test_diagnosis_out_of_range(self, dataset_dir):
        path = dataset_dir / "train.records"
        record = json.loads(path.read_text(encoding="utf-8").splitlines()[6])
        record["y"] = 3
        replace_line(path, 7, json.dumps(record))
        with pytest.raises(DatasetError, match="diagnosis 3 outside"):
            read_dataset(dataset_dir)

    def test_wrong_patch_shape(self, dataset_dir):
        path = dataset_dir / "train.records"
        record = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
        record["patches"] = record["patches"][:2]
        replace_line(path, 1, json.dumps(record))
        with pytest.raises(DatasetError, match="4 x 6 patches"):
            read_dataset(dataset_dir)

    def test_id_reused_across_splits(self, dataset_dir, tiny_dataset):
        path = dataset_dir / "test.records"
        record = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
        record["id"] = tiny_dataset.train.ids[0]
        replace_line(path, 1, json.dumps(record))
        with pytest.raises(DatasetError, match="duplicate sample ids"):
            read_dataset(dataset_dir)


class TestCheckpointArchives:
    """Test rejection of tampered checkpoint archives."""

    def test_tampered_schema(self, tmp_path, checkpoint_file):
        with zipfile.ZipFile(checkpoint_file) as zf:
            meta = json.loads(zf.read("meta.json"))
        meta["dictionary"]["concepts"][0]["name"] = "tampered"
        damaged = rewrite_entry(
            checkpoint_file, tmp_path / "damaged.ckpt", "meta.json", json.dumps(meta)
        )
        with pytest.raises(CheckpointError, match="does not match its hash"):
            load_checkpoint(damaged)

    def test_garbage_metadata(self, tmp_path, checkpoint_file):
        damaged = rewrite_entry(checkpoint_file, tmp_path / "damaged.ckpt", "meta.json", b"\x00")
        with pytest.raises(CheckpointError, match="invalid metadata"):
            load_checkpoint(damaged)

    def test_pickled_array_refused(self, tmp_path, checkpoint_file):
        buffer = io.BytesIO()
        np.save(buffer, np.array([{"payload": 1}], dtype=object), allow_pickle=True)
        damaged = rewrite_entry(
            checkpoint_file, tmp_path / "damaged.ckpt", "buffers/bank.npy", buffer.getvalue()
        )
        with pytest.raises(CheckpointError, match="unreadable"):
            load_checkpoint(damaged)

    def test_parameter_shape_mismatch(self, tmp_path, checkpoint_file):
        buffer = io.BytesIO()
        np.save(buffer, np.zeros(99), allow_pickle=False)
        damaged = rewrite_entry(
            checkpoint_file, tmp_path / "damaged.ckpt", "params/head.bias.npy", buffer.getvalue()
        )
        with pytest.raises(CheckpointError, match="head.bias"):
            load_checkpoint(damaged)


class TestCommandLineErrors:
    """Test that hostile inputs surface as error records, not tracebacks."""

    def test_tampered_dataset_on_eval(self, dataset_dir, checkpoint_file, capsys):
        replace_line(dataset_dir / "val.records", 1, "{")
        code = main(["eval", "--checkpoint", str(checkpoint_file), "--data", str(dataset_dir)])
        err = capsys.readouterr().err
        assert code == 1
        record = json.loads(err.strip().splitlines()[-1])
        assert record["error"] == "dataset_error"
        assert "val.records line 1" in record["message"]

    def test_non_checkpoint_on_explain(self, tmp_path, dataset_dir, tiny_dataset, capsys):
        fake = tmp_path / "fake.ckpt"
        fake.write_bytes(b"PK\x03\x04 not really")
        code = main([
            "explain",
            "--checkpoint", str(fake),
            "--data", str(dataset_dir),
            "--samples", tiny_dataset.test.ids[0],
        ])
        err = capsys.readouterr().err
        assert code == 1
        assert json.loads(err.strip().splitlines()[-1])["error"] == "checkpoint_error"

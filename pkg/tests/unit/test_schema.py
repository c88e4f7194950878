"""Unit tests for the concept schema, prompts and prototypes."""

import json

import numpy as np
import pytest

from models.encoders import HashTextEncoder
from models.schema import (
    ConceptDictionary,
    ConceptSpec,
    PrototypeBank,
    build_prompts,
    build_prototypes,
    load_schema,
)
from services.errors import MissingInputError, NumericError, SchemaError

pytestmark = pytest.mark.unit


class ZeroEncoder:
    d_t = 8

    def encode(self, prompt: str) -> np.ndarray:
        return np.zeros(self.d_t)


class TestConceptDictionary:
    """Test node indexing and validation."""

    def test_offsets_and_node_count(self, dictionary):
        """Node ids are contiguous by concept, then value."""
        assert dictionary.value_counts == [2, 3]
        assert dictionary.offsets == [0, 2]
        assert dictionary.num_nodes == 5
        assert dictionary.node_id(1, 2) == 4

    def test_node_of_inverts_node_id(self, dictionary):
        """node_of is the inverse of node_id on every node."""
        for node in range(dictionary.num_nodes):
            assert dictionary.node_id(*dictionary.node_of(node)) == node

    def test_concept_of_nodes(self, dictionary):
        np.testing.assert_array_equal(dictionary.concept_of_nodes(), [0, 0, 1, 1, 1])

    def test_node_label(self, dictionary):
        assert dictionary.node_label(1) == "size=large"
        assert dictionary.node_label(4) == "shape=irregular"

    def test_out_of_range_nodes(self, dictionary):
        """Unknown nodes raise SchemaError."""
        with pytest.raises(SchemaError):
            dictionary.node_id(0, 2)
        with pytest.raises(SchemaError):
            dictionary.node_of(5)

    def test_single_value_concept_rejected(self):
        """Every concept needs at least two values."""
        with pytest.raises(ValueError):
            ConceptSpec(name="flag", values=["yes"])

    def test_duplicate_values_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            ConceptSpec(name="size", values=["small", "small"])

    def test_duplicate_concepts_rejected(self):
        spec = ConceptSpec(name="size", values=["small", "large"])
        with pytest.raises(ValueError, match="unique"):
            ConceptDictionary(concepts=[spec, spec])

    def test_template_needs_one_placeholder(self):
        """Templates without exactly one '{}' are rejected."""
        spec = ConceptSpec(name="size", values=["small", "large"])
        with pytest.raises(ValueError, match="placeholder|\\{\\}"):
            ConceptDictionary(concepts=[spec], templates=["no placeholder"])

    def test_synonyms_for_unknown_value(self):
        with pytest.raises(ValueError, match="unknown values"):
            ConceptSpec(name="size", values=["small", "large"], synonyms={"huge": ["vast"]})

    def test_schema_hash_is_stable(self, dictionary):
        """Equal dictionaries hash equally; any change alters the hash."""
        copy = ConceptDictionary.model_validate(dictionary.model_dump())
        assert copy.schema_hash() == dictionary.schema_hash()
        changed = ConceptDictionary(
            concepts=dictionary.concepts, templates=["a cell that is {}"]
        )
        assert changed.schema_hash() != dictionary.schema_hash()


class TestLoadSchema:
    """Test reading schema files."""

    def test_load(self, tmp_path, dictionary):
        path = tmp_path / "schema.json"
        path.write_text(json.dumps(dictionary.model_dump(mode="json")), encoding="utf-8")
        assert load_schema(path) == dictionary

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            load_schema(tmp_path / "absent.json")

    def test_invalid_content(self, tmp_path):
        """Malformed JSON and invalid schemas are SchemaErrors."""
        path = tmp_path / "schema.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(SchemaError):
            load_schema(path)
        path.write_text(json.dumps({"concepts": []}), encoding="utf-8")
        with pytest.raises(SchemaError):
            load_schema(path)


class TestBuildPrompts:
    """Test prompt generation."""

    def test_value_with_synonym(self, dictionary):
        """Bare names first, then each template per name."""
        assert build_prompts(dictionary, 0, 1) == [
            "large",
            "big",
            "a cell that is large",
            "a cell that is big",
            "an image of large",
            "an image of big",
        ]

    def test_value_without_synonyms(self, dictionary):
        assert build_prompts(dictionary, 1, 0) == [
            "round",
            "a cell that is round",
            "an image of round",
        ]

    def test_no_ensemble(self, dictionary):
        """Without ensembling only the value name is used."""
        assert build_prompts(dictionary, 0, 1, ensemble=False) == ["large"]

    def test_duplicates_removed(self):
        """A synonym equal to a generated prompt appears once."""
        dictionary = ConceptDictionary(
            concepts=[
                ConceptSpec(
                    name="tone", values=["dark", "light"], synonyms={"dark": ["an image of dark"]}
                )
            ],
            templates=["an image of {}"],
        )
        prompts = build_prompts(dictionary, 0, 0)
        assert len(prompts) == len(set(prompts))
        assert prompts[:2] == ["dark", "an image of dark"]

    def test_unknown_node(self, dictionary):
        with pytest.raises(SchemaError):
            build_prompts(dictionary, 2, 0)


class TestBuildPrototypes:
    """Test prototype construction."""

    def test_shape_and_norm_bound(self, dictionary):
        """One row per node, each of norm at most one."""
        raw = build_prototypes(dictionary, HashTextEncoder(16, seed=0))
        assert raw.shape == (5, 16)
        assert np.all(np.linalg.norm(raw, axis=1) <= 1.0 + 1e-12)

    def test_mean_of_normalized_embeddings(self, dictionary):
        """A prototype is the plain mean of its unit prompt embeddings."""
        encoder = HashTextEncoder(16, seed=0)
        raw = build_prototypes(dictionary, encoder)
        expected = np.mean([encoder.encode(p) for p in build_prompts(dictionary, 1, 2)], axis=0)
        np.testing.assert_allclose(raw[4], expected)

    def test_single_prompt_is_unit_norm(self, dictionary):
        raw = build_prototypes(dictionary, HashTextEncoder(16, seed=0), ensemble=False)
        np.testing.assert_allclose(np.linalg.norm(raw, axis=1), 1.0)

    def test_zero_embedding_rejected(self, dictionary):
        with pytest.raises(NumericError, match="size=small"):
            build_prototypes(dictionary, ZeroEncoder())

    def test_bank(self, dictionary):
        raw = build_prototypes(dictionary, HashTextEncoder(16, seed=0))
        bank = PrototypeBank(raw)
        assert bank.num_nodes == 5
        assert bank.d_t == 16
        np.testing.assert_allclose(bank.norms(), np.linalg.norm(raw, axis=1))

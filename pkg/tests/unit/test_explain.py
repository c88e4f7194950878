"""Unit tests for explanation reports."""

import json

import numpy as np
import pytest

from models.dcgnet import build_model
from services.errors import DatasetError
from services.explain import (
    explain_sample,
    explain_samples,
    render_pretty,
    render_records,
    strongest_edges,
)

pytestmark = pytest.mark.unit


@pytest.fixture
def scored_model(tiny_model):
    """Tiny model with non-trivial edge scores."""
    tiny_model.graph.b.data = np.random.default_rng(3).normal(size=(5, 5))
    return tiny_model


class TestStrongestEdges:
    def test_positive_entries_only(self):
        assert strongest_edges(np.array([0.0, 0.4, 0.0, 0.6]), 3) == [3, 1]

    def test_ties_go_to_lower_index(self):
        assert strongest_edges(np.array([0.5, 0.2, 0.5]), 1) == [0]


class TestExplainSamples:
    """Test report contents."""

    def test_contribution_identity(self, scored_model, tiny_dataset):
        """Every contribution equals relevance times predicted-value probability."""
        reports = explain_samples(scored_model, tiny_dataset, tiny_dataset.train.ids[:20])
        assert len(reports) == 20
        for report in reports:
            for row in report.panel_b:
                assert abs(row.contribution - row.relevance * row.probability) <= 1e-12
                assert 0.0 < row.relevance < 1.0

    def test_panels(self, scored_model, tiny_dataset):
        sample = tiny_dataset.test.ids[0]
        (report,) = explain_samples(scored_model, tiny_dataset, [sample], top_n=1)
        assert report.split == "test"
        assert report.truth == int(tiny_dataset.test.labels[0])
        assert sum(report.probabilities) == pytest.approx(1.0)
        assert [row.concept for row in report.panel_a] == [0, 1]
        for row in report.panel_a:
            assert sum(row.probabilities) == pytest.approx(1.0)
            assert row.predicted == int(np.argmax(row.probabilities))
        assert len(report.panel_b) == 1
        assert report.panel_c[0].concept == report.panel_b[0].concept
        assert all(n <= 1.0 + 1e-12 for n in report.prototype_norms)

    def test_panel_b_sorted(self, scored_model, tiny_dataset):
        (report,) = explain_samples(scored_model, tiny_dataset, [tiny_dataset.val.ids[1]])
        contributions = [row.contribution for row in report.panel_b]
        assert contributions == sorted(contributions, reverse=True)
        assert len(report.panel_b) == 2

    def test_edges_cross_concepts(self, scored_model, tiny_dataset):
        """Panel C never lists an edge inside one concept."""
        dictionary = tiny_dataset.dictionary
        samples = tiny_dataset.val.ids[:10]
        reports = explain_samples(scored_model, tiny_dataset, samples, edges_per_node=2)
        for report in reports:
            for entry in report.panel_c:
                for node in entry.nodes:
                    assert len(node.edges) <= 2
                    source = dictionary.node_of(node.node)[0]
                    for edge in node.edges:
                        assert dictionary.node_of(edge.target)[0] != source
                        assert edge.weight > 0.0

    def test_attention(self, scored_model, tiny_dataset):
        (report,) = explain_samples(
            scored_model, tiny_dataset, [tiny_dataset.train.ids[0]], patches_per_node=2
        )
        for item in report.attention:
            assert len(item.patches) == 2
            assert item.weights == sorted(item.weights, reverse=True)
            assert all(0 <= p < 4 for p in item.patches)

    def test_repeat_is_byte_identical(self, scored_model, tiny_dataset):
        samples = tiny_dataset.val.ids[:5]
        first = render_records(explain_samples(scored_model, tiny_dataset, samples))
        second = render_records(explain_samples(scored_model, tiny_dataset, samples))
        assert first == second
        assert [json.loads(line)["sample"] for line in first.splitlines()] == samples

    def test_fixed_half_relevance_and_probability(self, tiny_model, tiny_dataset):
        """Zeroed relevance keys and value heads give alpha = p = 0.5 on a binary concept."""
        tiny_model.dca.i2t_key_proj.data[:] = 0.0
        for head in tiny_model.dca.value_heads:
            head.weight.data[:] = 0.0
            head.bias.data[:] = 0.0
        (report,) = explain_samples(tiny_model, tiny_dataset, [tiny_dataset.train.ids[0]])
        by_concept = {row.concept: row for row in report.panel_b}
        assert by_concept[0].contribution == pytest.approx(0.25, abs=1e-12)
        assert by_concept[1].contribution == pytest.approx(0.5 / 3.0, abs=1e-12)

    def test_without_graph(self, tiny_dataset, model_config):
        config = model_config.model_copy(update={"use_graph": False})
        model = build_model(tiny_dataset.dictionary, tiny_dataset.train.concepts, config, 6, 3, 1)
        report = explain_sample(model, tiny_dataset.train.patches[0], "x")
        assert all(not node.edges for entry in report.panel_c for node in entry.nodes)
        assert report.truth is None

    def test_unknown_sample(self, scored_model, tiny_dataset):
        with pytest.raises(DatasetError):
            explain_samples(scored_model, tiny_dataset, ["s999999"])


class TestRendering:
    def test_pretty(self, scored_model, tiny_dataset):
        (report,) = explain_samples(scored_model, tiny_dataset, [tiny_dataset.train.ids[0]])
        text = render_pretty(report)
        assert text.startswith(f"sample {report.sample} (train)")
        assert "[B] contributions" in text
        assert "[C] concept graph" in text

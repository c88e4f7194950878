"""Unit tests for dual cross-attention."""

import numpy as np
import pytest

from engine import tensor as T
from engine.module import Linear
from engine.tensor import Tensor
from models.attention import (
    DualCrossAttention,
    MultiHeadAttention,
    PatchEncoder,
    VisualTokens,
    concept_logits,
    fuse,
    i2t_relevance,
    t2i_attention,
)
from services.errors import ConfigError, DimensionError

pytestmark = pytest.mark.unit


@pytest.fixture
def tokens(rng):
    """Batch of 3 with 4 patches of width 8."""
    patches = Tensor(rng.normal(size=(3, 4, 8)))
    cls = Tensor(rng.normal(size=(3, 8)))
    return VisualTokens(cls=cls, patches=patches)


class TestVisualTokens:
    """Test the token container."""

    def test_sequence_puts_cls_first(self, tokens):
        sequence = tokens.sequence()
        assert sequence.shape == (3, 5, 8)
        np.testing.assert_array_equal(sequence.data[:, 0], tokens.cls.data)
        np.testing.assert_array_equal(sequence.data[:, 1:], tokens.patches.data)

    def test_mismatched_cls(self, rng):
        with pytest.raises(DimensionError):
            VisualTokens(
                cls=Tensor(rng.normal(size=(2, 8))), patches=Tensor(rng.normal(size=(3, 4, 8)))
            )


class TestPatchEncoder:
    """Test the trainable patch backbone."""

    def test_shapes(self, rng):
        encoder = PatchEncoder(6, 8, rng)
        tokens = encoder(Tensor(rng.normal(size=(2, 5, 6))))
        assert tokens.patches.shape == (2, 5, 8)
        assert tokens.cls.shape == (2, 8)
        assert np.all(tokens.patches.data >= 0.0)

    def test_wrong_input_width(self, rng):
        with pytest.raises(DimensionError):
            PatchEncoder(6, 8, rng)(Tensor(rng.normal(size=(2, 5, 7))))


class TestMultiHeadAttention:
    """Test scaled dot-product attention."""

    def test_heads_must_divide_width(self, rng):
        with pytest.raises(ConfigError):
            MultiHeadAttention(8, 3, rng)

    def test_weights_are_distributions(self, rng, tokens):
        """Each query's weights over the sequence sum to one."""
        mha = MultiHeadAttention(8, 2, rng)
        result = mha(Tensor(rng.normal(size=(5, 8))), tokens.sequence())
        assert result.output.shape == (3, 5, 8)
        assert result.weights.shape == (3, 2, 5, 5)
        np.testing.assert_allclose(result.weights.sum(axis=-1), 1.0)

    def test_single_head_matches_numpy(self, rng, tokens):
        """One head reduces to softmax(q k^T / sqrt(d)) v followed by W_o."""
        mha = MultiHeadAttention(8, 1, rng)
        queries = rng.normal(size=(5, 8))
        sequence = tokens.sequence().data

        def affine(layer, x):
            return x @ layer.weight.data + layer.bias.data

        q = affine(mha.w_q, queries)
        k = affine(mha.w_k, sequence)
        v = affine(mha.w_v, sequence)
        scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(8.0)
        weights = np.exp(scores - scores.max(axis=-1, keepdims=True))
        weights /= weights.sum(axis=-1, keepdims=True)
        expected = affine(mha.w_o, weights @ v)
        result = mha(Tensor(queries), tokens.sequence())
        np.testing.assert_allclose(result.output.data, expected, atol=1e-12)


class TestT2I:
    """Test prototype-to-patch attention."""

    def test_maps_cover_patches_only(self, rng, tokens):
        """Patch maps drop the CLS column and renormalize."""
        mha = MultiHeadAttention(8, 2, rng)
        result = t2i_attention(Tensor(rng.normal(size=(5, 8))), tokens, mha)
        assert result.evidence.shape == (3, 5, 8)
        assert result.attn_maps.shape == (3, 5, 4)
        assert result.head_maps.shape == (3, 2, 5, 4)
        np.testing.assert_allclose(result.attn_maps.sum(axis=-1), 1.0)
        np.testing.assert_allclose(result.head_maps.sum(axis=-1), 1.0)
        assert np.all(result.attn_maps >= 0.0)

    def test_prototype_width_checked(self, rng, tokens):
        with pytest.raises(DimensionError):
            t2i_attention(Tensor(rng.normal(size=(5, 6))), tokens, MultiHeadAttention(8, 2, rng))


class TestI2T:
    """Test the CLS-to-prototype relevance gates."""

    def test_independent_gates(self, rng, tokens):
        """Relevance lies in (0, 1) and need not sum to one."""
        prototypes = Tensor(rng.normal(size=(5, 8)))
        key_proj = Tensor(rng.normal(size=(8, 8)))
        relevance = i2t_relevance(tokens.cls, prototypes, key_proj, tau=1.0)
        assert relevance.shape == (3, 5)
        assert np.all((relevance.data > 0.0) & (relevance.data < 1.0))
        expected = 1.0 / (1.0 + np.exp(-(tokens.cls.data @ (prototypes.data @ key_proj.data).T)))
        np.testing.assert_allclose(relevance.data, expected)

    def test_zero_key_projection_gives_half(self, rng, tokens):
        prototypes = Tensor(rng.normal(size=(5, 8)))
        relevance = i2t_relevance(tokens.cls, prototypes, Tensor(np.zeros((8, 8))), 0.5)
        np.testing.assert_allclose(relevance.data, 0.5)

    def test_temperature_sharpens(self, rng, tokens):
        """A lower temperature pushes gates further from one half."""
        prototypes = Tensor(rng.normal(size=(5, 8)))
        key_proj = Tensor(rng.normal(size=(8, 8)))
        warm = i2t_relevance(tokens.cls, prototypes, key_proj, tau=2.0).data
        cold = i2t_relevance(tokens.cls, prototypes, key_proj, tau=0.5).data
        assert np.all(np.abs(cold - 0.5) >= np.abs(warm - 0.5))

    def test_non_positive_tau(self, rng, tokens):
        with pytest.raises(ConfigError):
            i2t_relevance(tokens.cls, Tensor(np.ones((5, 8))), Tensor(np.eye(8)), 0.0)


class TestFusionAndHeads:
    """Test gating and per-concept value heads."""

    def test_fuse_scales_rows(self, rng):
        evidence = rng.normal(size=(2, 5, 4))
        relevance = rng.uniform(size=(2, 5))
        fused = fuse(Tensor(evidence), Tensor(relevance))
        np.testing.assert_allclose(fused.data, evidence * relevance[..., None])

    def test_concept_logits_pool_value_rows(self, rng, dictionary):
        """Concept k reads the mean of its own value rows."""
        fused = rng.normal(size=(2, 5, 4))
        relevance = rng.uniform(size=(2, 5))
        heads = [Linear(4, count, rng) for count in dictionary.value_counts]
        logits, pooled = concept_logits(Tensor(fused), Tensor(relevance), dictionary, heads)
        assert [u.shape for u in logits] == [(2, 2), (2, 3)]
        pooled_rows = fused[:, 2:5].mean(axis=1)
        np.testing.assert_allclose(
            logits[1].data, pooled_rows @ heads[1].weight.data + heads[1].bias.data
        )
        np.testing.assert_allclose(
            pooled.data, np.stack([relevance[:, :2].mean(1), relevance[:, 2:].mean(1)], axis=1)
        )

    def test_head_count_checked(self, rng, dictionary):
        with pytest.raises(DimensionError):
            concept_logits(
                Tensor(np.zeros((1, 5, 4))),
                Tensor(np.zeros((1, 5))),
                dictionary,
                [Linear(4, 2, rng)],
            )


class TestDualCrossAttention:
    """Test the assembled stage."""

    def test_outputs(self, rng, dictionary, tokens):
        dca = DualCrossAttention(dictionary, 8, 2, tau=1.0, rng=rng)
        out = dca(Tensor(rng.normal(size=(5, 8))), tokens)
        assert out.fused.shape == (3, 5, 8)
        assert out.relevance.shape == (3, 5)
        assert out.concept_relevance.shape == (3, 2)
        assert out.head_maps is None
        assert dca(Tensor(rng.normal(size=(5, 8))), tokens, debug_heads=True).head_maps is not None

    def test_gradients_reach_every_parameter(self, rng, dictionary, tokens):
        dca = DualCrossAttention(dictionary, 8, 2, tau=1.0, rng=rng)
        out = dca(Tensor(rng.normal(size=(5, 8))), tokens)
        T.reduce_sum(T.concat(out.concept_logits, axis=1)).backward()
        for name, param in dca.named_parameters():
            assert param.grad is not None, name

    def test_patch_order_equivariance(self, rng, dictionary, tokens):
        """Permuting patches permutes the maps and leaves every pooled output unchanged."""
        dca = DualCrossAttention(dictionary, 8, 2, tau=1.0, rng=rng)
        prototypes = Tensor(rng.normal(size=(5, 8)))
        order = np.array([2, 0, 3, 1])
        shuffled = VisualTokens(cls=tokens.cls, patches=Tensor(tokens.patches.data[:, order]))
        a = dca(prototypes, tokens)
        b = dca(prototypes, shuffled)
        np.testing.assert_allclose(b.attn_maps, a.attn_maps[..., order], atol=1e-12)
        np.testing.assert_allclose(b.fused.data, a.fused.data, atol=1e-12)
        np.testing.assert_allclose(b.relevance.data, a.relevance.data, atol=1e-12)
        for left, right in zip(a.concept_logits, b.concept_logits, strict=True):
            np.testing.assert_allclose(right.data, left.data, atol=1e-12)

"""Tests for the feature extraction stack."""

from dataclasses import replace

import pytest
import torch

from triple_disentangle.core.encoder import (
    ConvNormalize,
    EncoderConfig,
    FeatureExtractor,
    pool_tokens,
    sinusoidal_positions,
)
from triple_disentangle.data.batching import collate
from triple_disentangle.data.features import MODALITIES, Modality
from triple_disentangle.utils.exceptions import ConfigError, ShapeError, ValidationError


class TestConvNormalize:
    """Tests for the framewise convolution."""

    def test_identity_kernel(self):
        """With d^m == d_model and an identity kernel the tokens equal the input."""
        conv = ConvNormalize(4, 4)
        conv.reset_identity()
        values = torch.randn(2, 3, 4)
        mask = torch.ones(2, 3, dtype=torch.bool)
        assert torch.equal(conv(values, mask), values)

    def test_masked_frames_are_zero(self):
        """Masked-out frames come out as zero vectors."""
        conv = ConvNormalize(3, 8)
        mask = torch.tensor([[True, False, True]])
        out = conv(torch.randn(1, 3, 3), mask)
        assert out.shape == (1, 3, 8)
        assert torch.all(out[0, 1] == 0)

    def test_wrong_feature_dim(self):
        """A feature width other than d^m is a shape error."""
        with pytest.raises(ShapeError, match="expected feature dim 3"):
            ConvNormalize(3, 8)(torch.randn(1, 2, 5), torch.ones(1, 2, dtype=torch.bool))

    def test_identity_needs_square(self):
        with pytest.raises(ShapeError):
            ConvNormalize(3, 8).reset_identity()


class TestPooling:
    """Tests for pool_tokens."""

    def test_masked_mean(self):
        """Masked-out frames do not enter the mean."""
        tokens = torch.tensor([[[1.0], [3.0], [100.0]]])
        mask = torch.tensor([[True, True, False]])
        assert pool_tokens(tokens, mask, "mean_masked").item() == 2.0

    def test_first_token(self):
        tokens = torch.tensor([[[5.0], [3.0]]])
        assert pool_tokens(tokens, torch.ones(1, 2, dtype=torch.bool), "first_token").item() == 5.0

    def test_first_token_masked(self):
        tokens = torch.randn(2, 3, 4)
        mask = torch.tensor([[True, True, False], [False, True, True]])
        with pytest.raises(ValidationError, match="first frame"):
            pool_tokens(tokens, mask, "first_token")

    def test_positions_shape(self):
        table = sinusoidal_positions(7, 6, torch.zeros(1))
        assert table.shape == (7, 6)
        assert table[0, 1] == 1.0


class TestEncoderConfig:
    """Tests for encoder validation."""

    def test_heads_must_divide(self, tiny_encoder):
        """Head counts that do not divide d_model are rejected."""
        cfg = replace(tiny_encoder, heads={"text": 3, "audio": 2, "visual": 2})
        with pytest.raises(ConfigError, match="encoder.heads.text=3"):
            cfg.validate()

    def test_zero_layers(self, tiny_encoder):
        cfg = replace(tiny_encoder, shared_layers=0)
        with pytest.raises(ConfigError, match="shared"):
            cfg.validate()

    def test_even_kernel(self, tiny_encoder):
        with pytest.raises(ConfigError, match="conv_kernel"):
            replace(tiny_encoder, conv_kernel=2).validate()


class TestFeatureExtractor:
    """Tests for the full extraction stack."""

    def test_shapes(self, tiny_encoder, feature_dims, make_records, seeded):
        """Token states keep (B, τ, d_model) and pooled vectors are (B, d_model)."""
        extractor = FeatureExtractor(tiny_encoder, feature_dims).eval()
        batch = collate(make_records(3))
        encoded = extractor(batch.values, batch.masks)
        for m in MODALITIES:
            tau = batch.values[m].shape[1]
            assert encoded[m].token_states.shape == (3, tau, 8)
            assert encoded[m].pooled.shape == (3, 8)

    def test_padding_invariance(self, tiny_encoder, feature_dims, make_records, seeded):
        """Extra masked padding frames leave the pooled output unchanged."""
        extractor = FeatureExtractor(tiny_encoder, feature_dims).eval()
        batch = collate(make_records(2))
        values = {}
        masks = {}
        for m in MODALITIES:
            pad = torch.randn(2, 3, feature_dims[m]) * 50
            values[m] = torch.cat([batch.values[m], pad], dim=1)
            masks[m] = torch.cat([batch.masks[m], torch.zeros(2, 3, dtype=torch.bool)], dim=1)
        with torch.no_grad():
            plain = extractor(batch.values, batch.masks)
            padded = extractor(values, masks)
        for m in MODALITIES:
            torch.testing.assert_close(plain[m].pooled, padded[m].pooled, rtol=1e-5, atol=1e-5)

    def test_interior_masked_frames_change_nothing(self, tiny_encoder, feature_dims, seeded):
        """New values at masked-out interior frames give bit-identical outputs."""
        extractor = FeatureExtractor(replace(tiny_encoder, conv_kernel=3), feature_dims).eval()
        mask = torch.tensor([[True, False, True, False, True], [True, True, False, True, False]])
        values = {m: torch.randn(2, 5, feature_dims[m]) for m in MODALITIES}
        masks = {m: mask for m in MODALITIES}
        changed = {m: torch.where(mask.unsqueeze(-1), v, torch.randn_like(v) * 100) for m, v in values.items()}
        with torch.no_grad():
            plain = extractor(values, masks)
            other = extractor(changed, masks)
        for m in MODALITIES:
            assert torch.equal(plain[m].pooled, other[m].pooled)
            assert torch.equal(plain[m].token_states[mask], other[m].token_states[mask])

    def test_encode_modality_batch_permutation(self, tiny_encoder, feature_dims, seeded):
        """Permuting the batch permutes the encoded rows and nothing else."""
        extractor = FeatureExtractor(tiny_encoder, feature_dims).eval()
        tokens = torch.randn(4, 5, 8)
        mask = torch.tensor(
            [[True] * 5, [True, True, True, False, False], [True, False, True, True, True], [True] + [False] * 4]
        )
        perm = torch.tensor([2, 0, 3, 1])
        with torch.no_grad():
            out = extractor.encode_modality(tokens, mask, Modality.AUDIO)
            permuted = extractor.encode_modality(tokens[perm], mask[perm], Modality.AUDIO)
        keep = mask[perm]
        torch.testing.assert_close(permuted[keep], out[perm][keep], rtol=1e-6, atol=1e-6)

    def test_masked_keys_get_no_attention(self, tiny_encoder, feature_dims, seeded):
        """Attention weights on masked-out keys are exactly zero."""
        extractor = FeatureExtractor(tiny_encoder, feature_dims).eval()
        tokens = torch.randn(1, 4, 8)
        mask = torch.tensor([[True, True, False, False]])
        maps = extractor.attention_maps(tokens, mask, Modality.TEXT)
        assert maps[0].shape == (1, 2, 4, 4)
        assert torch.all(maps[0][..., 2:] == 0)
        torch.testing.assert_close(maps[0].sum(-1), torch.ones(1, 2, 4))

    def test_encode_modality_width_check(self, tiny_encoder, feature_dims):
        extractor = FeatureExtractor(tiny_encoder, feature_dims)
        with pytest.raises(ShapeError, match="d_model"):
            extractor.encode_modality(
                torch.randn(1, 2, 5), torch.ones(1, 2, dtype=torch.bool), Modality.AUDIO
            )

    def test_without_shared_encoder(self, tiny_encoder, feature_dims, make_records):
        """Disabling the shared encoder still yields pooled vectors."""
        extractor = FeatureExtractor(replace(tiny_encoder, shared_encoder=False), feature_dims)
        assert extractor.shared is None
        batch = collate(make_records(2))
        assert extractor(batch.values, batch.masks)[Modality.VISUAL].pooled.shape == (2, 8)

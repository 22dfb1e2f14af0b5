"""Feature extraction: per-modality 1-D convolution, modality-specific
Transformer encoders, a shared Transformer encoder and masked pooling."""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
from torch import nn

from ..data.features import MODALITIES, Modality
from ..utils.exceptions import ConfigError, ShapeError, ValidationError

POOLING_METHODS = ("mean_masked", "first_token")


@dataclass
class EncoderConfig:
    """Sizes of the feature-extraction stack."""

    d_model: int = 128
    layers: Dict[str, int] = field(
        default_factory=lambda: {"text": 4, "audio": 2, "visual": 2}
    )
    shared_layers: int = 4
    heads: Dict[str, int] = field(
        default_factory=lambda: {"text": 8, "audio": 4, "visual": 4}
    )
    shared_heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.1
    pooling: str = "mean_masked"
    conv_kernel: int = 1
    positional: bool = True
    shared_encoder: bool = True

    def validate(self) -> None:
        """Check layer counts, head divisibility and rates.

        Raises:
            ConfigError: If any invariant is violated
        """
        keys = {m.key for m in MODALITIES}
        if set(self.layers) != keys or set(self.heads) != keys:
            raise ConfigError("encoder.layers and encoder.heads need text, audio and visual")
        if self.d_model < 1:
            raise ConfigError(f"encoder.d_model must be positive, got {self.d_model}")
        for name, count in list(self.layers.items()) + [("shared", self.shared_layers)]:
            if count < 1:
                raise ConfigError(f"encoder layer count for {name} must be >= 1, got {count}")
        for name, heads in list(self.heads.items()) + [("shared", self.shared_heads)]:
            check_heads(self.d_model, heads, f"encoder.heads.{name}")
        if self.ffn_mult < 1:
            raise ConfigError(f"encoder.ffn_mult must be >= 1, got {self.ffn_mult}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"encoder.dropout must lie in [0, 1), got {self.dropout}")
        if self.pooling not in POOLING_METHODS:
            raise ConfigError(f"encoder.pooling must be one of {POOLING_METHODS}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError(f"encoder.conv_kernel must be a positive odd number, got {self.conv_kernel}")


def check_heads(d_model: int, heads: int, where: str) -> None:
    """Raise ConfigError unless heads >= 1 divides d_model."""
    if heads < 1 or d_model % heads != 0:
        raise ConfigError(f"{where}={heads} must divide d_model={d_model}")


@dataclass
class EncodedModality:
    """Refined token states x̂^m and their pooled vector."""

    modality: Modality
    token_states: torch.Tensor
    pooled: torch.Tensor
    mask: torch.Tensor


def sinusoidal_positions(length: int, d_model: int, like: torch.Tensor) -> torch.Tensor:
    """Standard sine/cosine position table of shape (length, d_model)."""
    position = torch.arange(length, dtype=like.dtype, device=like.device).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, d_model, 2, dtype=like.dtype, device=like.device)
        * (-math.log(10000.0) / d_model)
    )
    table = torch.zeros(length, d_model, dtype=like.dtype, device=like.device)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div)[:, : d_model // 2]
    return table


def pool_tokens(token_states: torch.Tensor, mask: torch.Tensor, method: str) -> torch.Tensor:
    """Reduce (B, τ, d) token states to (B, d), ignoring masked-out frames.

    Raises:
        ValidationError: first_token pooling with a masked-out first frame
    """
    if method == "first_token":
        if not bool(mask[:, 0].all()):
            raise ValidationError("first_token pooling needs the first frame of every sample unmasked")
        return token_states[:, 0]
    weights = mask.to(token_states.dtype).unsqueeze(-1)
    total = (token_states * weights).sum(dim=1)
    return total / weights.sum(dim=1).clamp_min(1.0)


class ConvNormalize(nn.Module):
    """Framewise 1-D convolution mapping d^m features to d_model."""

    def __init__(self, in_dim: int, d_model: int, kernel_size: int = 1):
        super().__init__()
        self.in_dim = in_dim
        self.conv = nn.Conv1d(in_dim, d_model, kernel_size, padding=kernel_size // 2)

    def reset_identity(self) -> None:
        """Identity kernel (requires in_dim == d_model) with zero bias."""
        if self.conv.in_channels != self.conv.out_channels:
            raise ShapeError("identity initialization needs in_dim == d_model")
        with torch.no_grad():
            self.conv.weight.zero_()
            center = self.conv.kernel_size[0] // 2
            self.conv.weight[:, :, center] = torch.eye(self.conv.in_channels)
            if self.conv.bias is not None:
                self.conv.bias.zero_()

    def forward(self, values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if values.shape[-1] != self.in_dim:
            raise ShapeError(f"expected feature dim {self.in_dim}, got {values.shape[-1]}")
        keep = mask.unsqueeze(-1)
        values = torch.where(keep, values, torch.zeros_like(values))
        tokens = self.conv(values.transpose(1, 2)).transpose(1, 2)
        return torch.where(keep, tokens, torch.zeros_like(tokens))


class EncoderLayer(nn.Module):
    """Pre-norm Transformer encoder layer with key-padding masking."""

    def __init__(self, d_model: int, heads: int, ffn_mult: int, dropout: float):
        super().__init__()
        check_heads(d_model, heads, "heads")
        self.norm1 = nn.LayerNorm(d_model)
        self.attention = nn.MultiheadAttention(d_model, heads, dropout=dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(d_model)
        self.feed_forward = nn.Sequential(
            nn.Linear(d_model, d_model * ffn_mult),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(d_model * ffn_mult, d_model),
        )
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        h = self.norm1(x)
        attended, weights = self.attention(
            h, h, h,
            key_padding_mask=~mask,
            need_weights=True,
            average_attn_weights=False,
        )
        x = x + self.dropout(attended)
        x = x + self.dropout(self.feed_forward(self.norm2(x)))
        return x, weights


class TransformerStack(nn.Module):
    """N pre-norm encoder layers followed by a final LayerNorm."""

    def __init__(self, d_model: int, num_layers: int, heads: int, ffn_mult: int, dropout: float):
        super().__init__()
        self.layers = nn.ModuleList(
            EncoderLayer(d_model, heads, ffn_mult, dropout) for _ in range(num_layers)
        )
        self.norm = nn.LayerNorm(d_model)

    def forward(
        self, x: torch.Tensor, mask: torch.Tensor
    ) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        maps = []
        for layer in self.layers:
            x, weights = layer(x, mask)
            maps.append(weights)
        return self.norm(x), maps


class FeatureExtractor(nn.Module):
    """Conv normalization, modality encoders and the shared encoder."""

    def __init__(self, cfg: EncoderConfig, feature_dims: Dict[Modality, int]):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.feature_dims = {Modality.parse(m): int(d) for m, d in feature_dims.items()}
        self.conv = nn.ModuleDict({
            m.key: ConvNormalize(self.feature_dims[m], cfg.d_model, cfg.conv_kernel)
            for m in MODALITIES
        })
        self.modality_encoders = nn.ModuleDict({
            m.key: TransformerStack(
                cfg.d_model, cfg.layers[m.key], cfg.heads[m.key], cfg.ffn_mult, cfg.dropout
            )
            for m in MODALITIES
        })
        self.shared: Optional[TransformerStack] = None
        if cfg.shared_encoder:
            self.shared = TransformerStack(
                cfg.d_model, cfg.shared_layers, cfg.shared_heads, cfg.ffn_mult, cfg.dropout
            )

    def conv_normalize(
        self, values: torch.Tensor, mask: torch.Tensor, modality: Modality
    ) -> torch.Tensor:
        """(B, τ, d^m) → (B, τ, d_model); masked frames come out as zeros."""
        return self.conv[modality.key](values, mask)

    def encode_modality(
        self, tokens: torch.Tensor, mask: torch.Tensor, modality: Modality
    ) -> torch.Tensor:
        """Run the modality-specific encoder; shape is preserved."""
        if tokens.shape[-1] != self.cfg.d_model:
            raise ShapeError(f"tokens width {tokens.shape[-1]} != d_model {self.cfg.d_model}")
        out, _ = self.modality_encoders[modality.key](tokens, mask)
        return out

    def encode_shared(
        self, tokens: Dict[Modality, torch.Tensor], masks: Dict[Modality, torch.Tensor]
    ) -> Dict[Modality, EncodedModality]:
        """Pass every modality through the same shared encoder, then pool."""
        encoded = {}
        for modality in MODALITIES:
            x = tokens[modality]
            if x.shape[-1] != self.cfg.d_model:
                raise ShapeError(f"{modality.key} width {x.shape[-1]} != d_model {self.cfg.d_model}")
            if self.shared is not None:
                x, _ = self.shared(x, masks[modality])
            pooled = pool_tokens(x, masks[modality], self.cfg.pooling)
            encoded[modality] = EncodedModality(modality, x, pooled, masks[modality])
        return encoded

    def forward(
        self, values: Dict[Modality, torch.Tensor], masks: Dict[Modality, torch.Tensor]
    ) -> Dict[Modality, EncodedModality]:
        refined = {}
        for modality in MODALITIES:
            mask = masks[modality]
            tokens = self.conv_normalize(values[modality], mask, modality)
            if self.cfg.positional:
                tokens = tokens + sinusoidal_positions(tokens.shape[1], self.cfg.d_model, tokens)
            refined[modality] = self.encode_modality(tokens, mask, modality)
        return self.encode_shared(refined, masks)

    def attention_maps(
        self, tokens: torch.Tensor, mask: torch.Tensor, modality: Modality
    ) -> List[torch.Tensor]:
        """Per-layer (B, heads, τ, τ) attention of the modality encoder."""
        _, maps = self.modality_encoders[modality.key](tokens, mask)
        return maps

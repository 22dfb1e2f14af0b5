"""Triple disentanglement: split x̂^m into r and u, then r into (r*, r∩u) and
u into (u*, r∩u) with dual-output attention, and reconstruct x̂^m."""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
from torch import nn

from ..data.features import MODALITIES, Modality
from ..utils.exceptions import ConfigError, ShapeError
from ..utils.validation import require_same_shape


@dataclass
class DisentanglerConfig:
    """Disentanglement module settings."""

    tokens: int = 8
    decoder_hidden: Optional[int] = None
    shared_discriminator: bool = True
    enabled: bool = True

    def validate(self, d_model: int) -> None:
        if self.tokens < 1 or d_model % self.tokens != 0:
            raise ConfigError(
                f"disentangler.tokens={self.tokens} must divide d_model={d_model}"
            )
        if self.decoder_hidden is not None and self.decoder_hidden < 1:
            raise ConfigError("disentangler.decoder_hidden must be positive")


@dataclass
class BranchPair:
    """Label-relevant branch r and modality-specific branch u, each (B, d)."""

    r: torch.Tensor
    u: torch.Tensor


@dataclass
class DisentangledTriple:
    """r*, r∩u and u* of one modality, each (B, d_model)."""

    modality: Modality
    r_star: torch.Tensor
    r_cap_u: torch.Tensor
    u_star: torch.Tensor


@dataclass
class DualAttentionOutput:
    """All four directional outputs plus both attention maps (B, h, h)."""

    r_star: torch.Tensor
    r_cap_u_ur: torch.Tensor
    u_star: torch.Tensor
    r_cap_u_ru: torch.Tensor
    attention_ur: torch.Tensor
    attention_ru: torch.Tensor


@dataclass
class ModalityDisentanglement:
    """Everything the losses need from one modality."""

    branches: BranchPair
    triple: DisentangledTriple
    attention: DualAttentionOutput
    reconstruction: torch.Tensor


def combine_intersection(dir_ur: torch.Tensor, dir_ru: torch.Tensor) -> torch.Tensor:
    """Elementwise mean of the two directional intersections."""
    require_same_shape(dir_ur, dir_ru, "combine_intersection")
    return (dir_ur + dir_ru) / 2


class DualOutputAttention(nn.Module):
    """Attention that returns both A·V and its complement (1 − A)·V.

    Pooled vectors are reshaped into `tokens` tokens of width d_k before
    attention and flattened afterwards. `1` is the all-ones matrix, so for
    each query i, r*_i + (r∩u)_i equals the column sum of V.
    """

    def __init__(self, d_model: int, tokens: int = 8):
        super().__init__()
        if tokens < 1 or d_model % tokens != 0:
            raise ConfigError(f"tokens={tokens} must divide d_model={d_model}")
        self.tokens = tokens
        self.d_k = d_model // tokens
        self.query_u = nn.Linear(self.d_k, self.d_k, bias=False)
        self.key_r = nn.Linear(self.d_k, self.d_k, bias=False)
        self.value_r = nn.Linear(self.d_k, self.d_k, bias=False)
        self.query_r = nn.Linear(self.d_k, self.d_k, bias=False)
        self.key_u = nn.Linear(self.d_k, self.d_k, bias=False)
        self.value_u = nn.Linear(self.d_k, self.d_k, bias=False)

    def split_tokens(self, x: torch.Tensor) -> torch.Tensor:
        return x.reshape(*x.shape[:-1], self.tokens, self.d_k)

    @staticmethod
    def split(
        query: torch.Tensor, key: torch.Tensor, value: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Token-level dual output: (A·V, (1 − A)·V, A)."""
        scores = query @ key.transpose(-2, -1) / math.sqrt(query.shape[-1])
        attention = torch.softmax(scores, dim=-1)
        attended = attention @ value
        complement = (torch.ones_like(attention) - attention) @ value
        return attended, complement, attention

    def forward(self, r: torch.Tensor, u: torch.Tensor) -> DualAttentionOutput:
        require_same_shape(r, u, "dual_output_attention")
        r_tokens = self.split_tokens(r)
        u_tokens = self.split_tokens(u)

        cap_ur, r_star, attention_ur = self.split(
            self.query_u(u_tokens), self.key_r(r_tokens), self.value_r(r_tokens)
        )
        cap_ru, u_star, attention_ru = self.split(
            self.query_r(r_tokens), self.key_u(u_tokens), self.value_u(u_tokens)
        )
        flat = r.shape
        return DualAttentionOutput(
            r_star=r_star.reshape(flat),
            r_cap_u_ur=cap_ur.reshape(flat),
            u_star=u_star.reshape(flat),
            r_cap_u_ru=cap_ru.reshape(flat),
            attention_ur=attention_ur,
            attention_ru=attention_ru,
        )


class ModalityDisentangler(nn.Module):
    """Branch FCs, dual-output attention and decoder for one modality."""

    def __init__(self, d_model: int, tokens: int = 8, decoder_hidden: Optional[int] = None):
        super().__init__()
        self.d_model = d_model
        self.branch_r = nn.Linear(d_model, d_model)
        self.branch_u = nn.Linear(d_model, d_model)
        self.attention = DualOutputAttention(d_model, tokens)
        hidden = decoder_hidden or 2 * d_model
        self.decoder = nn.Sequential(
            nn.Linear(3 * d_model, hidden),
            nn.GELU(),
            nn.Linear(hidden, d_model),
        )

    def branch_project(self, x_hat: torch.Tensor) -> BranchPair:
        """r = tanh(W_r x̂ + b_r), u = tanh(W_u x̂ + b_u)."""
        if x_hat.shape[-1] != self.d_model:
            raise ShapeError(f"x_hat width {x_hat.shape[-1]} != d_model {self.d_model}")
        return BranchPair(torch.tanh(self.branch_r(x_hat)), torch.tanh(self.branch_u(x_hat)))

    def reconstruct(self, triple: DisentangledTriple) -> torch.Tensor:
        """Decode the concatenation (r*, r∩u, u*) back to d_model."""
        return self.decoder(torch.cat([triple.r_star, triple.r_cap_u, triple.u_star], dim=-1))

    def forward(self, x_hat: torch.Tensor, modality: Modality) -> ModalityDisentanglement:
        branches = self.branch_project(x_hat)
        attention = self.attention(branches.r, branches.u)
        triple = DisentangledTriple(
            modality=modality,
            r_star=attention.r_star,
            r_cap_u=combine_intersection(attention.r_cap_u_ur, attention.r_cap_u_ru),
            u_star=attention.u_star,
        )
        return ModalityDisentanglement(branches, triple, attention, self.reconstruct(triple))


class Disentangler(nn.Module):
    """Three independent parameter sets, one per modality."""

    def __init__(self, d_model: int, cfg: DisentanglerConfig):
        super().__init__()
        cfg.validate(d_model)
        self.per_modality = nn.ModuleDict({
            m.key: ModalityDisentangler(d_model, cfg.tokens, cfg.decoder_hidden)
            for m in MODALITIES
        })

    def __getitem__(self, modality: Modality) -> ModalityDisentangler:
        return self.per_modality[modality.key]  # type: ignore[return-value]

    def forward(
        self, pooled: Dict[Modality, torch.Tensor]
    ) -> Dict[Modality, ModalityDisentanglement]:
        return {m: self[m](pooled[m], m) for m in MODALITIES}

"""Multi-head attention fusion of the effective representations, the
prediction head FC_c and the modality discriminator FC_m."""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from ..data.features import MODALITIES, Modality
from ..utils.exceptions import ShapeError
from .disentangler import DisentangledTriple
from .encoder import check_heads

FUSION_LABELS = ("r*_t", "r*_a", "r*_v", "r∩u_t", "r∩u_a", "r∩u_v")
STAGE1_LABELS = ("x̂_t", "x̂_a", "x̂_v")


@dataclass
class FusionInput:
    """The six fusion tokens, (B, 6, d_model), ordered as FUSION_LABELS."""

    tokens: torch.Tensor

    def __post_init__(self) -> None:
        if self.tokens.dim() != 3 or self.tokens.shape[1] != len(FUSION_LABELS):
            raise ShapeError(
                f"fusion input must be (B, {len(FUSION_LABELS)}, d), got {tuple(self.tokens.shape)}"
            )

    @classmethod
    def from_triples(cls, triples: Dict[Modality, DisentangledTriple]) -> "FusionInput":
        rows = [triples[m].r_star for m in MODALITIES] + [triples[m].r_cap_u for m in MODALITIES]
        return cls(torch.stack(rows, dim=1))


class AttentionTrace:
    """Running mean of fusion attention maps over a dataset."""

    def __init__(self, labels: Sequence[str] = FUSION_LABELS):
        self.labels = tuple(labels)
        self.count = 0
        self._sum: Optional[torch.Tensor] = None
        self._head_sum: Optional[torch.Tensor] = None

    def update(self, per_head: torch.Tensor) -> None:
        """Accumulate a (B, heads, n, n) batch of attention maps."""
        n = len(self.labels)
        if per_head.dim() != 4 or per_head.shape[-2:] != (n, n):
            raise ShapeError(f"expected (B, heads, {n}, {n}) attention, got {tuple(per_head.shape)}")
        per_head = per_head.detach().to(torch.float64)
        head_total = per_head.sum(dim=0)
        if self._head_sum is None:
            self._head_sum = head_total
        else:
            self._head_sum = self._head_sum + head_total
        mean_total = per_head.mean(dim=1).sum(dim=0)
        self._sum = mean_total if self._sum is None else self._sum + mean_total
        self.count += per_head.shape[0]

    @property
    def mean(self) -> torch.Tensor:
        """Head-averaged (n, n) attention averaged over samples."""
        if self._sum is None:
            raise ShapeError("attention trace is empty")
        return self._sum / self.count

    @property
    def per_head(self) -> torch.Tensor:
        """(heads, n, n) attention averaged over samples."""
        if self._head_sum is None:
            raise ShapeError("attention trace is empty")
        return self._head_sum / self.count

    def column_sums(self) -> torch.Tensor:
        """Contribution of each key representation."""
        return self.mean.sum(dim=0)

    def to_text(self, path: Union[str, Path]) -> None:
        """Write the mean matrix as a labelled grid, then the column sums."""
        matrix = self.mean.numpy()
        width = max(len(label) for label in self.labels) + 2
        lines = ["query\\key".ljust(width) + "".join(label.rjust(10) for label in self.labels)]
        for label, row in zip(self.labels, matrix):
            lines.append(label.ljust(width) + "".join(f"{value:10.6f}" for value in row))
        sums = self.column_sums().numpy()
        lines.append("colsum".ljust(width) + "".join(f"{value:10.6f}" for value in sums))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_attention_grid(path: Union[str, Path]) -> Tuple[Tuple[str, ...], np.ndarray, np.ndarray]:
    """Parse a grid written by AttentionTrace.to_text."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    labels = tuple(lines[0].split()[1:])
    rows = [[float(v) for v in line.split()[1:]] for line in lines[1:-1]]
    column_sums = np.array([float(v) for v in lines[-1].split()[1:]])
    return labels, np.array(rows), column_sums


class AttentionFusion(nn.Module):
    """One pre-norm multi-head self-attention layer over a token set, then mean pooling.

    No positional encoding is added: the tokens are a set.
    """

    def __init__(self, d_model: int, heads: int = 4, dropout: float = 0.0):
        super().__init__()
        check_heads(d_model, heads, "fusion heads")
        self.norm = nn.LayerNorm(d_model)
        self.attention = nn.MultiheadAttention(d_model, heads, dropout=dropout, batch_first=True)

    def forward(self, tokens: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(B, n, d) → fused (B, d) and per-head attention (B, heads, n, n)."""
        h = self.norm(tokens)
        attended, weights = self.attention(
            h, h, h, need_weights=True, average_attn_weights=False
        )
        return (tokens + attended).mean(dim=1), weights

    def fuse(self, fusion_input: FusionInput) -> Tuple[torch.Tensor, torch.Tensor]:
        """Fuse the six effective tokens; returns (fused, head-averaged 6×6 attention)."""
        fused, weights = self(fusion_input.tokens)
        return fused, weights.mean(dim=1)


class PredictionHead(nn.Module):
    """FC_c: a scalar for regression, class probabilities for classification."""

    def __init__(self, d_model: int, task: str, num_classes: Optional[int] = None):
        super().__init__()
        self.task = task
        out = 1 if task == "regression" else int(num_classes or 0)
        if out < 1:
            raise ShapeError("classification head needs num_classes")
        self.linear = nn.Linear(d_model, out)

    def _finish(self, logits: torch.Tensor) -> torch.Tensor:
        if self.task == "regression":
            return logits.squeeze(-1)
        return torch.softmax(logits, dim=-1)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return self._finish(self.linear(fused))

    def forward_frozen(self, x: torch.Tensor) -> torch.Tensor:
        """Same head with detached parameters: gradients reach x only."""
        bias = self.linear.bias.detach() if self.linear.bias is not None else None
        return self._finish(nn.functional.linear(x, self.linear.weight.detach(), bias))


class ModalityDiscriminator(nn.Module):
    """FC_m on the concatenation (u*, r∩u), softmax over {text, audio, visual}."""

    def __init__(self, d_model: int, shared: bool = True):
        super().__init__()
        self.shared = shared
        if shared:
            self.linear = nn.Linear(2 * d_model, len(MODALITIES))
        else:
            self.per_modality = nn.ModuleDict({
                m.key: nn.Linear(2 * d_model, len(MODALITIES)) for m in MODALITIES
            })

    def forward(
        self, u_star: torch.Tensor, r_cap_u: torch.Tensor, modality: Optional[Modality] = None
    ) -> torch.Tensor:
        if u_star.shape != r_cap_u.shape:
            raise ShapeError(f"u* {tuple(u_star.shape)} and r∩u {tuple(r_cap_u.shape)} differ")
        joined = torch.cat([u_star, r_cap_u], dim=-1)
        if self.shared:
            layer = self.linear
        else:
            if modality is None:
                raise ShapeError("per-modality discriminator needs the modality")
            layer = self.per_modality[modality.key]
        return torch.softmax(layer(joined), dim=-1)

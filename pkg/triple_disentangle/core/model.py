"""The full network: feature extraction, disentanglement, fusion and heads."""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
from torch import nn

from ..data.batching import UtteranceBatch
from ..data.features import MODALITIES, Modality
from ..utils.logging import warn_once
from .disentangler import Disentangler, DisentanglerConfig, ModalityDisentanglement
from .encoder import EncodedModality, EncoderConfig, FeatureExtractor
from .fusion import (
    FUSION_LABELS,
    STAGE1_LABELS,
    AttentionFusion,
    FusionInput,
    ModalityDiscriminator,
    PredictionHead,
)
from .losses import (
    LossReport,
    LossSettings,
    inter_independence_loss,
    intra_exclusive_loss,
    modality_loss,
    recon_loss,
    sim_loss,
    task_loss,
    total_loss,
    ucorr_loss,
)

FUSION_HEADS = 4
REPRESENTATIONS = ("r_star", "r_cap_u", "u_star", "x_hat")
REPRESENTATION_NAMES = {"r_star": "r*", "r_cap_u": "r∩u", "u_star": "u*", "x_hat": "x̂"}


@dataclass
class ModelOutput:
    """One forward pass.

    `parts` is None when the disentangler is not in the graph (stage 1 or
    the disentangler ablation); `attention` is the per-head fusion attention.
    """

    prediction: torch.Tensor
    encoded: Dict[Modality, EncodedModality]
    parts: Optional[Dict[Modality, ModalityDisentanglement]]
    attention: torch.Tensor

    @property
    def labels(self) -> Tuple[str, ...]:
        return FUSION_LABELS if self.parts is not None else STAGE1_LABELS

    def representation(self, name: str, modality: Modality) -> torch.Tensor:
        """Pooled vector `name` (one of REPRESENTATIONS) of a modality, (B, d_model)."""
        if name == "x_hat":
            return self.encoded[modality].pooled
        if self.parts is None:
            raise KeyError(f"representation {name!r} needs the disentangler")
        return getattr(self.parts[modality].triple, name)


class TripleDisentangleModel(nn.Module):
    """Encoders, per-modality disentanglers, attention fusion, FC_c and FC_m."""

    def __init__(
        self,
        encoder: EncoderConfig,
        disentangler: DisentanglerConfig,
        feature_dims: Dict[Modality, int],
        task: str = "regression",
        num_classes: Optional[int] = None,
    ):
        super().__init__()
        self.task = task
        self.num_classes = num_classes
        self.disentangler_cfg = disentangler
        self.extractor = FeatureExtractor(encoder, feature_dims)
        self.disentangler = Disentangler(encoder.d_model, disentangler)
        self.fusion = AttentionFusion(encoder.d_model, FUSION_HEADS)
        self.head = PredictionHead(encoder.d_model, task, num_classes)
        self.discriminator = ModalityDiscriminator(
            encoder.d_model, shared=disentangler.shared_discriminator
        )

    @property
    def d_model(self) -> int:
        return self.extractor.cfg.d_model

    @property
    def uses_disentangler(self) -> bool:
        return self.disentangler_cfg.enabled

    def encode(self, batch: UtteranceBatch) -> Dict[Modality, EncodedModality]:
        return self.extractor(batch.values, batch.masks)

    def forward_stage1(self, batch: UtteranceBatch) -> ModelOutput:
        """Fuse the three pooled x̂ vectors directly; the disentangler is bypassed."""
        encoded = self.encode(batch)
        tokens = torch.stack([encoded[m].pooled for m in MODALITIES], dim=1)
        fused, attention = self.fusion(tokens)
        return ModelOutput(self.head(fused), encoded, None, attention)

    def forward(self, batch: UtteranceBatch) -> ModelOutput:  # type: ignore[override]
        if not self.uses_disentangler:
            return self.forward_stage1(batch)
        encoded = self.encode(batch)
        parts = self.disentangler({m: encoded[m].pooled for m in MODALITIES})
        fusion_input = FusionInput.from_triples({m: parts[m].triple for m in MODALITIES})
        fused, attention = self.fusion(fusion_input.tokens)
        return ModelOutput(self.head(fused), encoded, parts, attention)

    def run(self, batch: UtteranceBatch, stage: int) -> ModelOutput:
        return self.forward_stage1(batch) if stage == 1 else self(batch)

    def reset_stage2_modules(self) -> None:
        """Reinitialize the disentangler and FC_m from the current torch seed."""
        for module in list(self.disentangler.modules()) + list(self.discriminator.modules()):
            if hasattr(module, "reset_parameters"):
                module.reset_parameters()

    def compute_losses(
        self, output: ModelOutput, labels: torch.Tensor, settings: LossSettings
    ) -> LossReport:
        """Every loss component for one batch, combined with settings.weights.

        Without disentangled parts only the task loss is active.
        """
        zero = output.prediction.new_zeros(())
        components = {name: zero for name in ("modality", "ucorr", "sim", "h_inter", "h_intra", "recon")}
        components["task"] = task_loss(output.prediction, labels, self.task)
        if output.parts is None:
            return total_loss(components, settings.weights)

        parts = output.parts
        triples = {m: parts[m].triple for m in MODALITIES}
        components["modality"] = sum(
            modality_loss(self.discriminator(triples[m].u_star, triples[m].r_cap_u, m), m)
            for m in MODALITIES
        ) / len(MODALITIES)
        components["recon"] = sum(
            recon_loss(parts[m].reconstruction, output.encoded[m].pooled) for m in MODALITIES
        ) / len(MODALITIES)

        r_star = {m: triples[m].r_star for m in MODALITIES}
        components["sim"] = sim_loss(r_star, settings.cmd_order, settings.bounds)

        degenerate = False
        if labels.shape[0] >= 2:
            ucorr_terms = []
            for m in MODALITIES:
                y_tilde = self.head.forward_frozen(triples[m].u_star)
                value, flag = ucorr_loss(y_tilde, labels, self.task, settings.ucorr_mode)
                ucorr_terms.append(value)
                degenerate = degenerate or flag
            components["ucorr"] = sum(ucorr_terms) / len(MODALITIES)
            components["h_inter"] = inter_independence_loss(
                {m: triples[m].r_cap_u for m in MODALITIES},
                settings.hsic_sigma,
                settings.hsic_kernel,
            )
            components["h_intra"] = intra_exclusive_loss(
                r_star,
                {m: triples[m].u_star for m in MODALITIES},
                settings.hsic_sigma,
                settings.hsic_kernel,
            )
        else:
            warn_once("batch of one sample: ucorr and HSIC terms skipped")
        return total_loss(components, settings.weights, degenerate)

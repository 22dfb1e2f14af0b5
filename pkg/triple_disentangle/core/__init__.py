"""Model, losses, training and evaluation."""

from .encoder import EncodedModality, EncoderConfig, FeatureExtractor
from .disentangler import (
    BranchPair,
    DisentangledTriple,
    Disentangler,
    DisentanglerConfig,
    DualOutputAttention,
    combine_intersection,
)
from .losses import LossReport, LossSettings, LossWeights, total_loss
from .fusion import (
    FUSION_LABELS,
    AttentionFusion,
    AttentionTrace,
    FusionInput,
    ModalityDiscriminator,
    PredictionHead,
)
from .model import REPRESENTATIONS, ModelOutput, TripleDisentangleModel
from .evaluator import (
    MetricReport,
    ProbeConfig,
    ProbeResult,
    RepresentationArchive,
    average_reports,
    compute_metrics,
    explain_samples,
    export_attention_trace,
    export_projection,
    export_representations,
    run_probe,
)
from .trainer import (
    Checkpoint,
    ExperimentData,
    TrainSchedule,
    load_experiment_data,
    run_training,
    train_stage1,
    train_stage2,
    update_step,
)

__all__ = [
    "EncodedModality",
    "EncoderConfig",
    "FeatureExtractor",
    "BranchPair",
    "DisentangledTriple",
    "Disentangler",
    "DisentanglerConfig",
    "DualOutputAttention",
    "combine_intersection",
    "LossReport",
    "LossSettings",
    "LossWeights",
    "total_loss",
    "FUSION_LABELS",
    "AttentionFusion",
    "AttentionTrace",
    "FusionInput",
    "ModalityDiscriminator",
    "PredictionHead",
    "REPRESENTATIONS",
    "ModelOutput",
    "TripleDisentangleModel",
    "MetricReport",
    "ProbeConfig",
    "ProbeResult",
    "RepresentationArchive",
    "average_reports",
    "compute_metrics",
    "explain_samples",
    "export_attention_trace",
    "export_projection",
    "export_representations",
    "run_probe",
    "Checkpoint",
    "ExperimentData",
    "TrainSchedule",
    "load_experiment_data",
    "run_training",
    "train_stage1",
    "train_stage2",
    "update_step",
]

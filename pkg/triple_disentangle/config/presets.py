"""Bundled experiment presets.

The dataset presets carry the published per-dataset hyperparameters
(learning rate, batch size, d_model and the six loss weights); their
`dataset.manifest` still has to point at user-supplied features.
"""

from typing import Callable, Dict, List

from ..core.encoder import EncoderConfig
from ..core.losses import LossSettings, LossWeights
from ..core.trainer import TrainSchedule
from ..data.synthetic import SyntheticSpec
from ..utils.exceptions import ConfigError
from .settings import DatasetConfig, ExperimentConfig


def _dataset_preset(
    name: str,
    learning_rate: float,
    batch_size: int,
    d_model: int,
    weights: LossWeights,
    task: str = "regression",
    num_classes: int = 0,
    stage2_epochs: int = 40,
) -> ExperimentConfig:
    return ExperimentConfig(
        name=name,
        task=task,
        num_classes=num_classes or None,
        dataset=DatasetConfig(manifest=f"{name}/manifest.jsonl"),
        encoder=EncoderConfig(d_model=d_model),
        loss=LossSettings(weights=weights),
        schedule=TrainSchedule(
            stage2_epochs=stage2_epochs,
            learning_rate=learning_rate,
            weight_decay=5e-5,
            batch_size=batch_size,
        ),
        output_dir=f"runs/{name}",
    )


def mosi() -> ExperimentConfig:
    return _dataset_preset(
        "mosi", 8e-5, 64, 128,
        LossWeights(w_task=1.0, w_sim=0.1, w_ucorr=0.8, w_recon=0.2, w_modality=0.05, w_h=1.0),
    )


def mosei() -> ExperimentConfig:
    return _dataset_preset(
        "mosei", 2e-5, 24, 256,
        LossWeights(w_task=1.0, w_sim=0.05, w_ucorr=0.5, w_recon=0.15, w_modality=0.03, w_h=0.8),
        stage2_epochs=10,
    )


def ur_funny() -> ExperimentConfig:
    return _dataset_preset(
        "ur_funny", 1e-5, 32, 256,
        LossWeights(w_task=1.0, w_sim=0.1, w_ucorr=0.3, w_recon=0.2, w_modality=0.05, w_h=0.8),
        task="classification", num_classes=2,
    )


def meld() -> ExperimentConfig:
    return _dataset_preset(
        "meld", 1e-5, 32, 256,
        LossWeights(w_task=1.0, w_sim=0.1, w_ucorr=0.3, w_recon=0.2, w_modality=0.05, w_h=0.8),
        task="classification", num_classes=6,
    )


def synthetic() -> ExperimentConfig:
    """Desk-scale run on the built-in generator."""
    return ExperimentConfig(
        name="synthetic",
        dataset=DatasetConfig(synthetic=SyntheticSpec()),
        encoder=EncoderConfig(
            d_model=32,
            layers={"text": 2, "audio": 1, "visual": 1},
            shared_layers=1,
            heads={"text": 4, "audio": 4, "visual": 4},
            shared_heads=4,
            ffn_mult=2,
            dropout=0.0,
        ),
        schedule=TrainSchedule(
            stage1_epochs=10,
            stage2_epochs=30,
            learning_rate=1e-3,
            weight_decay=5e-5,
            batch_size=64,
        ),
        output_dir="runs/synthetic",
    )


PRESETS: Dict[str, Callable[[], ExperimentConfig]] = {
    "mosi": mosi,
    "mosei": mosei,
    "ur_funny": ur_funny,
    "meld": meld,
    "synthetic": synthetic,
}


def preset_names() -> List[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> ExperimentConfig:
    """Return a fresh copy of a bundled preset.

    Raises:
        ConfigError: Unknown preset name
    """
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"Unknown preset {name!r}; available: {', '.join(preset_names())}")

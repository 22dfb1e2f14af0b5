"""Shared fixtures for triple-disentangle tests."""

from typing import Callable, List

import numpy as np
import pytest
import torch

from triple_disentangle.config.settings import DatasetConfig, ExperimentConfig
from triple_disentangle.core.disentangler import DisentanglerConfig
from triple_disentangle.core.encoder import EncoderConfig
from triple_disentangle.core.evaluator import ProbeConfig
from triple_disentangle.core.trainer import TrainSchedule
from triple_disentangle.data.features import MODALITIES, FeatureSequence, Modality
from triple_disentangle.data.manifest import UtteranceRecord
from triple_disentangle.data.synthetic import SyntheticSpec

FEATURE_DIMS = {Modality.TEXT: 6, Modality.AUDIO: 4, Modality.VISUAL: 5}


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch):
    """Keep tests independent of the caller's environment."""
    for key in ("TRIDIRA_OUT", "TRIDIRA_LOG_DB", "TRIDIRA_LOGS_OFF", "TRIDIRA_THREADS"):
        monkeypatch.delenv(key, raising=False)
    monkeypatch.setattr("triple_disentangle.utils.logging._WARNED", set())


@pytest.fixture
def feature_dims():
    return dict(FEATURE_DIMS)


@pytest.fixture
def tiny_encoder():
    return EncoderConfig(
        d_model=8,
        layers={"text": 1, "audio": 1, "visual": 1},
        shared_layers=1,
        heads={"text": 2, "audio": 2, "visual": 2},
        shared_heads=2,
        ffn_mult=2,
        dropout=0.0,
    )


@pytest.fixture
def tiny_disentangler():
    return DisentanglerConfig(tokens=4)


@pytest.fixture
def make_records() -> Callable[..., List[UtteranceRecord]]:
    """Factory for random regression records with ragged lengths."""

    def factory(n: int, seed: int = 0, split: str = "train", max_len: int = 5) -> List[UtteranceRecord]:
        rng = np.random.default_rng(seed)
        records = []
        for i in range(n):
            features = {}
            for m in MODALITIES:
                length = int(rng.integers(1, max_len + 1))
                features[m] = FeatureSequence.full(m, rng.standard_normal((length, FEATURE_DIMS[m])))
            label = float(np.clip(rng.standard_normal(), -3, 3))
            records.append(UtteranceRecord(f"{split}{seed}_{i:03d}", label, features, split))
        return records

    return factory


@pytest.fixture
def tiny_spec():
    return SyntheticSpec(
        num_samples=60,
        seq_lengths={"text": 3, "audio": 4, "visual": 3},
        feature_dims={"text": 6, "audio": 4, "visual": 5},
        latent_dims={"shared": 2, "effective": 2, "nuisance": 2},
        seed=3,
        valid_fraction=0.2,
        test_fraction=0.2,
    )


@pytest.fixture
def tiny_config(tiny_spec, tiny_encoder, tiny_disentangler, tmp_path):
    """A synthetic experiment small enough to train in a couple of seconds."""
    return ExperimentConfig(
        name="tiny",
        dataset=DatasetConfig(synthetic=tiny_spec),
        encoder=tiny_encoder,
        disentangler=tiny_disentangler,
        schedule=TrainSchedule(
            stage1_epochs=1,
            stage2_epochs=2,
            learning_rate=1e-3,
            batch_size=16,
            seeds=[0, 1],
        ),
        probe=ProbeConfig(epochs=3, batch_size=32),
        output_dir=str(tmp_path / "runs"),
    )


@pytest.fixture
def seeded():
    torch.manual_seed(0)
    return torch.Generator().manual_seed(0)

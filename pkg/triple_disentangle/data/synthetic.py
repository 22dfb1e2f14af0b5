"""Synthetic multimodal data with a known shared / effective / nuisance factor split.

Per sample we draw a shared factor s, and for every modality an effective
factor p_m and a nuisance factor n_m, all standard normal. The label only
sees (s, p_t, p_a, p_v); each modality observes an affine image of
(s, p_m, n_m) plus frame noise. A well-disentangled model should therefore
put s in r*, p_m in r∩u and n_m in u*.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from ..utils.exceptions import ValidationError
from .features import MODALITIES, FeatureSequence, Modality, write_feature_file
from .manifest import ManifestHeader, RecordDescriptor, UtteranceRecord, write_manifest

LATENT_KEYS = ("shared", "effective", "nuisance")
WEIGHT_KEYS = ("shared", "text", "audio", "visual")


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic generator."""

    num_samples: int = 8000
    seq_lengths: Dict[str, int] = field(
        default_factory=lambda: {"text": 8, "audio": 12, "visual": 10}
    )
    feature_dims: Dict[str, int] = field(
        default_factory=lambda: {"text": 32, "audio": 16, "visual": 16}
    )
    latent_dims: Dict[str, int] = field(
        default_factory=lambda: {"shared": 4, "effective": 4, "nuisance": 4}
    )
    label_weights: Dict[str, float] = field(
        default_factory=lambda: {"shared": 1.0, "text": 1.0, "audio": 0.5, "visual": 0.5}
    )
    noise_std: float = 0.1
    seed: int = 7
    nuisance_seed: Optional[int] = None
    valid_fraction: float = 0.1
    test_fraction: float = 0.15
    nonlinear: bool = False

    def validate(self) -> None:
        """Check the generator invariants.

        Raises:
            ValidationError: Nonpositive sizes, bad fractions or missing keys
        """
        if self.num_samples < 1:
            raise ValidationError(f"num_samples must be positive, got {self.num_samples}")
        for name, table, keys in (
            ("seq_lengths", self.seq_lengths, [m.key for m in MODALITIES]),
            ("feature_dims", self.feature_dims, [m.key for m in MODALITIES]),
            ("latent_dims", self.latent_dims, list(LATENT_KEYS)),
        ):
            if set(table) != set(keys):
                raise ValidationError(f"{name} must have keys {keys}, got {sorted(table)}")
            for key, value in table.items():
                if int(value) < 1:
                    raise ValidationError(f"{name}.{key} must be positive, got {value}")
        if set(self.label_weights) != set(WEIGHT_KEYS):
            raise ValidationError(f"label_weights must have keys {list(WEIGHT_KEYS)}")
        if not all(math.isfinite(w) for w in self.label_weights.values()):
            raise ValidationError("label_weights must be finite")
        if not self.noise_std >= 0:
            raise ValidationError(f"noise_std must be nonnegative, got {self.noise_std}")
        if not (0 <= self.valid_fraction < 1 and 0 <= self.test_fraction < 1):
            raise ValidationError("valid_fraction and test_fraction must lie in [0, 1)")
        if self.valid_fraction + self.test_fraction >= 1:
            raise ValidationError("valid_fraction + test_fraction must leave a training split")

    def modality_dims(self) -> Dict[Modality, int]:
        return {m: int(self.feature_dims[m.key]) for m in MODALITIES}


@dataclass
class SyntheticDataset:
    """Generated records plus the latent log used as an oracle."""

    records: List[UtteranceRecord]
    shared: np.ndarray
    effective: Dict[Modality, np.ndarray]
    nuisance: Dict[Modality, np.ndarray]
    labels: np.ndarray

    def save_latents(self, directory: Union[str, Path]) -> Path:
        """Write the latent log as one .npy file per array (byte-stable across runs)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = {"ids": np.array([r.id for r in self.records]), "shared": self.shared,
                  "labels": self.labels}
        for modality in MODALITIES:
            arrays[f"effective_{modality.key}"] = self.effective[modality]
            arrays[f"nuisance_{modality.key}"] = self.nuisance[modality]
        for name, array in arrays.items():
            np.save(directory / f"{name}.npy", array, allow_pickle=False)
        return directory


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Generate a deterministic synthetic dataset from spec.

    Mixing matrices, label-relevant latents, nuisance latents, frame noise and
    the split assignment each use their own generator derived from the seed,
    so changing nuisance_seed redraws only the nuisance factors.
    """
    spec.validate()
    n = spec.num_samples
    k_s = int(spec.latent_dims["shared"])
    k_p = int(spec.latent_dims["effective"])
    k_n = int(spec.latent_dims["nuisance"])
    k = k_s + k_p + k_n

    mix_rng = np.random.default_rng([spec.seed, 0])
    latent_rng = np.random.default_rng([spec.seed, 1])
    nuisance_rng = np.random.default_rng(
        [spec.seed, 2, spec.nuisance_seed if spec.nuisance_seed is not None else 0]
    )
    noise_rng = np.random.default_rng([spec.seed, 3])
    split_rng = np.random.default_rng([spec.seed, 4])

    mixing = {}
    for modality in MODALITIES:
        d = int(spec.feature_dims[modality.key])
        matrix = mix_rng.standard_normal((d, k)) / math.sqrt(k)
        bias = 0.1 * mix_rng.standard_normal(d)
        mixing[modality] = (matrix, bias)

    shared = latent_rng.standard_normal((n, k_s))
    effective = {m: latent_rng.standard_normal((n, k_p)) for m in MODALITIES}
    nuisance = {m: nuisance_rng.standard_normal((n, k_n)) for m in MODALITIES}

    weights = spec.label_weights
    labels = weights["shared"] * shared.mean(axis=1)
    for modality in MODALITIES:
        labels = labels + weights[modality.key] * effective[modality].mean(axis=1)

    frames = {}
    for modality in MODALITIES:
        matrix, bias = mixing[modality]
        latent = np.concatenate([shared, effective[modality], nuisance[modality]], axis=1)
        observed = latent @ matrix.T + bias
        if spec.nonlinear:
            observed = np.tanh(observed)
        tau = int(spec.seq_lengths[modality.key])
        noise = noise_rng.standard_normal((n, tau, observed.shape[1]))
        frames[modality] = observed[:, None, :] + spec.noise_std * noise

    splits = _assign_splits(n, spec.valid_fraction, spec.test_fraction, split_rng)
    records = []
    for i in range(n):
        features = {
            m: FeatureSequence.full(m, frames[m][i].astype(np.float32)) for m in MODALITIES
        }
        records.append(UtteranceRecord(f"syn{i:06d}", float(labels[i]), features, splits[i]))
    return SyntheticDataset(records, shared, effective, nuisance, labels)


def _assign_splits(
    n: int, valid_fraction: float, test_fraction: float, rng: np.random.Generator
) -> List[str]:
    n_valid = int(round(n * valid_fraction))
    n_test = int(round(n * test_fraction))
    splits = ["train"] * n
    order = rng.permutation(n)
    for i in order[:n_valid]:
        splits[i] = "valid"
    for i in order[n_valid:n_valid + n_test]:
        splits[i] = "test"
    return splits


def write_synthetic_dataset(dataset: SyntheticDataset, spec: SyntheticSpec, out_dir: Path) -> Path:
    """Materialize a synthetic dataset as TDRF files plus a manifest.

    Returns:
        Path of the written manifest; the latent log sits in latents/ next to it
    """
    feature_dir = out_dir / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    bound = max(3.0, float(np.ceil(np.abs(dataset.labels).max())))
    header = ManifestHeader(
        task="regression",
        feature_dims=spec.modality_dims(),
        label_range=(-bound, bound),
    )
    descriptors = []
    for record in dataset.records:
        paths = {}
        for modality, seq in record.features.items():
            path = feature_dir / f"{record.id}_{modality.short}.tdrf"
            write_feature_file(seq, path)
            paths[modality] = path
        descriptors.append(RecordDescriptor(record.id, record.label, paths, record.split))
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(header, descriptors, manifest_path)
    dataset.save_latents(out_dir / "latents")
    return manifest_path

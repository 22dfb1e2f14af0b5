"""Feature files, manifests, batching and the synthetic generator."""

from .features import (
    MODALITIES,
    FeatureSequence,
    Modality,
    read_feature_file,
    write_feature_file,
)
from .manifest import (
    Manifest,
    ManifestHeader,
    RecordDescriptor,
    UtteranceRecord,
    load_records,
    read_manifest,
    split_records,
    write_manifest,
)
from .batching import UtteranceBatch, collate, make_batches
from .synthetic import (
    SyntheticDataset,
    SyntheticSpec,
    generate_synthetic,
    write_synthetic_dataset,
)

__all__ = [
    "MODALITIES",
    "FeatureSequence",
    "Modality",
    "read_feature_file",
    "write_feature_file",
    "Manifest",
    "ManifestHeader",
    "RecordDescriptor",
    "UtteranceRecord",
    "load_records",
    "read_manifest",
    "split_records",
    "write_manifest",
    "UtteranceBatch",
    "collate",
    "make_batches",
    "SyntheticDataset",
    "SyntheticSpec",
    "generate_synthetic",
    "write_synthetic_dataset",
]

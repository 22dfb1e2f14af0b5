"""Dataset manifests: a JSON header line followed by one JSON record per line."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

from ..utils.exceptions import SchemaError, ValidationError
from .features import MODALITIES, FeatureSequence, Modality, read_feature_file

MANIFEST_FORMAT = "tdrf-manifest"
MANIFEST_VERSION = 1
TASKS = ("regression", "classification")
SPLITS = ("train", "valid", "test")


@dataclass
class ManifestHeader:
    """Dataset-level declarations shared by every record."""

    task: str
    feature_dims: Dict[Modality, int]
    label_range: Optional[Tuple[float, float]] = None
    num_classes: Optional[int] = None

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValidationError(f"Unknown task {self.task!r}; expected one of {TASKS}")
        self.feature_dims = {Modality.parse(k): int(v) for k, v in self.feature_dims.items()}
        if set(self.feature_dims) != set(MODALITIES):
            raise SchemaError("Header must declare feature dims for text, audio and visual")
        if self.task == "regression":
            if self.label_range is None:
                raise SchemaError("Regression manifest must declare label_range")
            low, high = (float(x) for x in self.label_range)
            if not high > low:
                raise ValidationError(f"Invalid label range {self.label_range}")
            self.label_range = (low, high)
        elif self.num_classes is None or int(self.num_classes) < 2:
            raise SchemaError("Classification manifest must declare num_classes >= 2")

    def parse_label(self, raw: Any, record_id: str) -> Union[float, int]:
        """Parse and range-check one label."""
        if self.task == "regression":
            value = float(raw)
            assert self.label_range is not None
            low, high = self.label_range
            if not low <= value <= high:
                raise ValidationError(
                    f"Record {record_id!r}: label {value} outside declared range [{low}, {high}]"
                )
            return value
        index = int(raw)
        if index != raw or not 0 <= index < int(self.num_classes or 0):
            raise ValidationError(
                f"Record {record_id!r}: class {raw!r} outside 0..{int(self.num_classes or 0) - 1}"
            )
        return index

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "task": self.task,
            "label_range": list(self.label_range) if self.label_range else None,
            "num_classes": self.num_classes,
            "feature_dims": {m.key: self.feature_dims[m] for m in MODALITIES},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ManifestHeader":
        if data.get("format") != MANIFEST_FORMAT:
            raise SchemaError(f"Not a manifest header: format={data.get('format')!r}")
        if data.get("version") != MANIFEST_VERSION:
            raise SchemaError(f"Unsupported manifest version {data.get('version')!r}")
        label_range = data.get("label_range")
        return cls(
            task=data.get("task", ""),
            feature_dims=data.get("feature_dims") or {},
            label_range=tuple(label_range) if label_range is not None else None,
            num_classes=data.get("num_classes"),
        )


@dataclass
class RecordDescriptor:
    """A manifest line: id, label, split and one feature-file path per modality."""

    id: str
    label: Union[float, int]
    paths: Dict[Modality, Path]
    split: str = "train"


@dataclass
class UtteranceRecord:
    """One utterance with its three loaded feature sequences."""

    id: str
    label: Union[float, int]
    features: Dict[Modality, FeatureSequence]
    split: str = "train"

    def validate(self, feature_dims: Optional[Dict[Modality, int]] = None) -> None:
        if set(self.features) != set(MODALITIES):
            raise SchemaError(f"Record {self.id!r} must hold exactly text, audio and visual")
        for modality, seq in self.features.items():
            if seq.modality != modality:
                raise SchemaError(f"Record {self.id!r}: {modality.key} slot holds {seq.modality.key}")
            seq.validate(feature_dims[modality] if feature_dims else None)


@dataclass
class Manifest:
    """A parsed manifest: header plus descriptors in file order."""

    header: ManifestHeader
    records: List[RecordDescriptor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[RecordDescriptor]:
        return iter(self.records)

    def __getitem__(self, index: int) -> RecordDescriptor:
        return self.records[index]


def read_manifest(path: Union[str, Path]) -> Manifest:
    """Parse a manifest file.

    Raises:
        SchemaError: Malformed header, or a record missing a field or modality
        ValidationError: A label outside the declared range
    """
    path = Path(path)
    base = path.parent
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise SchemaError(f"Manifest '{path}' is empty")

    try:
        header = ManifestHeader.from_dict(json.loads(lines[0]))
    except json.JSONDecodeError as e:
        raise SchemaError(f"Manifest '{path}' header is not JSON: {e}")

    records = []
    seen = set()
    for line_number, line in enumerate(lines[1:], start=2):
        try:
            item = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"Manifest '{path}' line {line_number} is not JSON: {e}")
        record_id = str(item.get("id", ""))
        if not record_id:
            raise SchemaError(f"Manifest '{path}' line {line_number} has no id")
        if record_id in seen:
            raise SchemaError(f"Duplicate record id {record_id!r}")
        seen.add(record_id)
        if "label" not in item:
            raise SchemaError(f"Record {record_id!r} has no label")
        paths = {}
        for modality in MODALITIES:
            raw = item.get(modality.key)
            if not raw:
                raise SchemaError(f"Record {record_id!r} is missing the {modality.key} path")
            paths[modality] = base / raw
        split = item.get("split", "train")
        if split not in SPLITS:
            raise SchemaError(f"Record {record_id!r} has unknown split {split!r}")
        records.append(
            RecordDescriptor(record_id, header.parse_label(item["label"], record_id), paths, split)
        )
    return Manifest(header, records)


def write_manifest(
    header: ManifestHeader, records: Sequence[RecordDescriptor], path: Union[str, Path]
) -> None:
    """Write a manifest; feature paths are stored relative to its directory."""
    path = Path(path)
    base = path.parent
    lines = [json.dumps(header.to_dict(), sort_keys=True)]
    for record in records:
        item: Dict[str, Any] = {"id": record.id, "label": record.label, "split": record.split}
        for modality in MODALITIES:
            item[modality.key] = Path(record.paths[modality]).relative_to(base).as_posix()
        lines.append(json.dumps(item, sort_keys=True))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_records(manifest: Manifest) -> List[UtteranceRecord]:
    """Read every feature file a manifest references."""
    records = []
    for descriptor in manifest:
        features = {m: read_feature_file(p) for m, p in descriptor.paths.items()}
        record = UtteranceRecord(descriptor.id, descriptor.label, features, descriptor.split)
        record.validate(manifest.header.feature_dims)
        records.append(record)
    return records


def split_records(records: Sequence[UtteranceRecord]) -> Dict[str, List[UtteranceRecord]]:
    """Group records by split, keeping their order."""
    groups: Dict[str, List[UtteranceRecord]] = {split: [] for split in SPLITS}
    for record in records:
        groups[record.split].append(record)
    return groups

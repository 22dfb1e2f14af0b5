"""TDRF feature files: one modality's frame matrix plus its validity mask.

Layout (little-endian):
    magic     4 bytes  b"TDRF"
    version   u32      1
    modality  u8       0=text, 1=audio, 2=visual
    length    u32      τ (frames)
    dim       u32      d (features per frame)
    values    τ·d f32  row-major
    mask      τ bytes  0 or 1
"""

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..utils.exceptions import FeatureFileError, ShapeError, ValidationError
from ..utils.validation import require_finite

MAGIC = b"TDRF"
VERSION = 1
HEADER = struct.Struct("<4sIBII")


class Modality(enum.IntEnum):
    """Modality tags, in the fixed t, a, v order used everywhere."""

    TEXT = 0
    AUDIO = 1
    VISUAL = 2

    @property
    def key(self) -> str:
        return self.name.lower()

    @property
    def short(self) -> str:
        return self.key[0]

    @classmethod
    def parse(cls, value: Union[str, int, "Modality"]) -> "Modality":
        if isinstance(value, Modality):
            return value
        if isinstance(value, int):
            return cls(value)
        lookup = {m.key: m for m in cls}
        lookup.update({m.short: m for m in cls})
        try:
            return lookup[value.lower()]
        except KeyError:
            raise ValidationError(f"Unknown modality: {value!r}")


MODALITIES = (Modality.TEXT, Modality.AUDIO, Modality.VISUAL)


@dataclass
class FeatureSequence:
    """One modality's per-utterance feature matrix (τ × d) with a frame mask."""

    modality: Modality
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.modality = Modality.parse(self.modality)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ShapeError(f"values must be τ × d, got shape {self.values.shape}")
        self.mask = np.asarray(self.mask, dtype=bool)

    @classmethod
    def full(cls, modality: Union[str, Modality], values: np.ndarray) -> "FeatureSequence":
        """Build a sequence whose frames are all valid."""
        values = np.asarray(values, dtype=np.float32)
        return cls(Modality.parse(modality), values, np.ones(values.shape[0], dtype=bool))

    @property
    def length(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def validate(self, expected_dim: Optional[int] = None) -> None:
        """Check the sequence invariants.

        Raises:
            ValidationError: NaN/Inf values, empty mask or a dimension mismatch
            ShapeError: mask length differs from the frame count
        """
        if self.length < 1 or self.dim < 1:
            raise ShapeError(f"{self.modality.key}: empty feature matrix {self.values.shape}")
        if self.mask.shape != (self.length,):
            raise ShapeError(
                f"{self.modality.key}: mask shape {self.mask.shape} != ({self.length},)"
            )
        require_finite(self.values, f"{self.modality.key} feature values")
        if not self.mask.any():
            raise ValidationError(f"{self.modality.key}: mask has no valid frame")
        if expected_dim is not None and self.dim != expected_dim:
            raise ValidationError(
                f"{self.modality.key}: dim {self.dim} != declared dim {expected_dim}"
            )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (
            self.modality == other.modality
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
            and np.array_equal(self.mask, other.mask)
        )


def write_feature_file(seq: FeatureSequence, path: Union[str, Path]) -> None:
    """Write a FeatureSequence as a TDRF file.

    Raises:
        ValidationError: If the sequence violates its invariants
        FeatureFileError: If the file cannot be written
    """
    seq.validate()
    path = Path(path)
    if not path.parent.is_dir():
        raise FeatureFileError(f"Parent directory does not exist: {path.parent}")

    header = HEADER.pack(MAGIC, VERSION, int(seq.modality), seq.length, seq.dim)
    payload = seq.values.astype("<f4", copy=False).tobytes(order="C")
    mask = seq.mask.astype(np.uint8).tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
            f.write(mask)
    except OSError as e:
        raise FeatureFileError(f"Error writing feature file '{path}': {e}")


def read_feature_file(path: Union[str, Path]) -> FeatureSequence:
    """Read a TDRF file back into a FeatureSequence.

    Raises:
        FeatureFileError: Missing file, bad magic/version or truncated payload
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise FeatureFileError(f"Error reading feature file '{path}': {e}")

    if len(data) < HEADER.size:
        raise FeatureFileError(f"'{path}' is too short for a TDRF header")
    magic, version, modality, length, dim = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FeatureFileError(f"'{path}' is not a TDRF file (magic {magic!r})")
    if version != VERSION:
        raise FeatureFileError(f"'{path}' has unsupported TDRF version {version}")

    n_values = length * dim
    expected = HEADER.size + 4 * n_values + length
    if len(data) != expected:
        raise FeatureFileError(f"'{path}' has {len(data)} bytes, expected {expected}")

    values = np.frombuffer(data, dtype="<f4", count=n_values, offset=HEADER.size)
    mask = np.frombuffer(data, dtype=np.uint8, count=length, offset=HEADER.size + 4 * n_values)
    try:
        tag = Modality(modality)
    except ValueError:
        raise FeatureFileError(f"'{path}' has unknown modality tag {modality}")
    return FeatureSequence(tag, values.reshape(length, dim).astype(np.float32), mask.astype(bool))

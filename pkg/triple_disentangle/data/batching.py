"""Padding and batching of utterance records."""

from dataclasses import dataclass
from typing import Dict, Iterator, List, Sequence

import numpy as np
import torch

from ..utils.exceptions import EmptyDatasetError, ValidationError
from .features import MODALITIES, Modality
from .manifest import UtteranceRecord


@dataclass
class UtteranceBatch:
    """An aligned batch: per-modality padded values (B × τmax × d) and masks."""

    ids: List[str]
    labels: torch.Tensor
    values: Dict[Modality, torch.Tensor]
    masks: Dict[Modality, torch.Tensor]

    def __len__(self) -> int:
        return len(self.ids)

    def to(self, dtype: torch.dtype) -> "UtteranceBatch":
        labels = self.labels.to(dtype) if self.labels.is_floating_point() else self.labels
        return UtteranceBatch(
            self.ids, labels, {m: v.to(dtype) for m, v in self.values.items()}, self.masks
        )


def collate(records: Sequence[UtteranceRecord]) -> UtteranceBatch:
    """Pad each modality to its batch maximum length; padding is masked out."""
    if not records:
        raise EmptyDatasetError("Cannot collate an empty record list")
    values = {}
    masks = {}
    for modality in MODALITIES:
        seqs = [r.features[modality] for r in records]
        max_len = max(s.length for s in seqs)
        dim = seqs[0].dim
        padded = np.zeros((len(seqs), max_len, dim), dtype=np.float32)
        mask = np.zeros((len(seqs), max_len), dtype=bool)
        for i, seq in enumerate(seqs):
            if seq.dim != dim:
                raise ValidationError(
                    f"{modality.key} dims differ within a batch: {seq.dim} != {dim}"
                )
            padded[i, : seq.length] = seq.values
            mask[i, : seq.length] = seq.mask
        values[modality] = torch.from_numpy(padded)
        masks[modality] = torch.from_numpy(mask)

    raw_labels = [r.label for r in records]
    if all(isinstance(label, int) and not isinstance(label, bool) for label in raw_labels):
        labels = torch.tensor(raw_labels, dtype=torch.long)
    else:
        labels = torch.tensor([float(x) for x in raw_labels], dtype=torch.float32)
    return UtteranceBatch([r.id for r in records], labels, values, masks)


def make_batches(
    records: Sequence[UtteranceRecord],
    batch_size: int,
    seed: int = 0,
    shuffle: bool = False,
) -> Iterator[UtteranceBatch]:
    """Yield padded batches; the last partial batch is kept.

    The same seed with shuffle=True always yields the same order.

    Raises:
        EmptyDatasetError: If records is empty
        ValidationError: If batch_size < 1
    """
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    if not records:
        raise EmptyDatasetError("Dataset is empty")

    if shuffle:
        generator = torch.Generator().manual_seed(seed)
        order = torch.randperm(len(records), generator=generator).tolist()
    else:
        order = list(range(len(records)))
    return _iterate(records, order, batch_size)


def _iterate(
    records: Sequence[UtteranceRecord], order: List[int], batch_size: int
) -> Iterator[UtteranceBatch]:
    for start in range(0, len(order), batch_size):
        yield collate([records[i] for i in order[start:start + batch_size]])

"""Type definitions for triple-disentangle."""

from typing import TypedDict


class LossRow(TypedDict):
    """One row of the per-epoch loss trace."""
    epoch: int
    task: float
    modality: float
    ucorr: float
    sim: float
    h_inter: float
    h_intra: float
    recon: float
    total: float


class ExplainRow(TypedDict):
    """Per-representation predictions for one utterance."""
    id: str
    label: float
    fused: float
    representation: str
    modality: str
    prediction: float

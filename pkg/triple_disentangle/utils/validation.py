"""Input validation utilities for triple-disentangle."""

from pathlib import Path
from typing import Union

import numpy as np
import torch

from .exceptions import ShapeError, ValidationError

SIMPLEX_TOLERANCE = 1e-6


def validate_path(file_path: Union[str, Path]) -> Path:
    """Validate and normalize an output path.

    Args:
        file_path: Path to validate

    Returns:
        Validated Path object

    Raises:
        ValidationError: If the path contains a parent-directory component
    """
    if isinstance(file_path, str):
        file_path = Path(file_path)

    if ".." in file_path.parts:
        raise ValidationError(f"Path traversal detected: {file_path}")

    return file_path


def require_finite(values: Union[np.ndarray, torch.Tensor], name: str) -> None:
    """Raise ValidationError if values hold NaN or Inf."""
    if isinstance(values, torch.Tensor):
        ok = bool(torch.isfinite(values).all())
    else:
        ok = bool(np.isfinite(values).all())
    if not ok:
        raise ValidationError(f"{name} contains NaN or Inf")


def require_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    """Raise ShapeError when two tensors differ in shape."""
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")


def check_simplex(probs: torch.Tensor, name: str = "probabilities") -> None:
    """Check that every row of probs lies on the probability simplex.

    Raises:
        ValidationError: If a row has negative entries or does not sum to 1
    """
    with torch.no_grad():
        if probs.dim() != 2:
            raise ShapeError(f"{name} must be a B×C matrix, got {tuple(probs.shape)}")
        if bool((probs < -SIMPLEX_TOLERANCE).any()):
            raise ValidationError(f"{name} has negative entries")
        sums = probs.sum(dim=1)
        if bool(((sums - 1.0).abs() > SIMPLEX_TOLERANCE).any()):
            raise ValidationError(f"{name} rows do not sum to 1 within {SIMPLEX_TOLERANCE}")

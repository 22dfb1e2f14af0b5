"""Utility functions for triple-disentangle."""

from .logging import setup_logging, get_logs_db_path, info, warn, warn_once
from .validation import validate_path, require_finite, check_simplex
from .exceptions import (
    DisentangleError,
    ValidationError,
    SchemaError,
    ShapeError,
    ConfigError,
    EmptyDatasetError,
    FeatureFileError,
    TrainingAbortedError,
    PreconditionError,
    ArchiveLookupError,
    FingerprintMismatchError,
)
from .types import LossRow, ExplainRow

__all__ = [
    "setup_logging",
    "get_logs_db_path",
    "info",
    "warn",
    "warn_once",
    "validate_path",
    "require_finite",
    "check_simplex",
    "DisentangleError",
    "ValidationError",
    "SchemaError",
    "ShapeError",
    "ConfigError",
    "EmptyDatasetError",
    "FeatureFileError",
    "TrainingAbortedError",
    "PreconditionError",
    "ArchiveLookupError",
    "FingerprintMismatchError",
    "LossRow",
    "ExplainRow",
]

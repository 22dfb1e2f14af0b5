"""Custom exceptions for triple-disentangle."""


class DisentangleError(Exception):
    """Base exception for all package errors."""
    pass


class ValidationError(DisentangleError):
    """Raised when input values violate an invariant."""
    pass


class SchemaError(DisentangleError):
    """Raised when a manifest line is structurally incomplete."""
    pass


class ShapeError(DisentangleError):
    """Raised when tensor shapes do not match a contract."""
    pass


class ConfigError(DisentangleError):
    """Raised when a configuration is invalid or has unknown keys."""
    pass


class EmptyDatasetError(DisentangleError):
    """Raised when batching or evaluation receives no records."""
    pass


class FeatureFileError(DisentangleError):
    """Raised when a feature file cannot be written or parsed."""
    pass


class TrainingAbortedError(DisentangleError):
    """Raised when training diverges (NaN loss or gradient)."""
    pass


class PreconditionError(DisentangleError):
    """Raised when an operation is called out of order."""
    pass


class ArchiveLookupError(DisentangleError, LookupError):
    """Raised when a representation is absent from an archive."""
    pass


class FingerprintMismatchError(DisentangleError):
    """Raised when a checkpoint was produced by a different model config."""
    pass

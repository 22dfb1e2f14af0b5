"""Experiment configuration and per-invocation run settings."""

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

from ..core.disentangler import DisentanglerConfig
from ..core.encoder import EncoderConfig
from ..core.evaluator import ProbeConfig
from ..core.fusion import FUSION_LABELS
from ..core.losses import LossSettings
from ..core.model import FUSION_HEADS
from ..core.trainer import TrainSchedule
from ..data.features import MODALITIES, Modality
from ..data.manifest import TASKS
from ..data.synthetic import SyntheticSpec
from ..utils.exceptions import ConfigError, DisentangleError
from ..utils.logging import get_logs_db_path

CONFIG_VERSION = 1


@dataclass
class DatasetConfig:
    """Exactly one of a manifest path or a synthetic generator spec."""

    manifest: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None

    def validate(self) -> None:
        if (self.manifest is None) == (self.synthetic is None):
            raise ConfigError("dataset needs exactly one of 'manifest' or 'synthetic'")
        if self.manifest is not None and not Path(self.manifest).is_file():
            raise ConfigError(f"dataset.manifest '{self.manifest}' does not exist")
        if self.synthetic is not None:
            try:
                self.synthetic.validate()
            except DisentangleError as e:
                raise ConfigError(f"dataset.synthetic: {e}")


@dataclass
class ExperimentConfig:
    """Everything one experiment needs: data, model sizes, losses, schedule."""

    version: int = CONFIG_VERSION
    name: str = "experiment"
    task: str = "regression"
    num_classes: Optional[int] = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    disentangler: DisentanglerConfig = field(default_factory=DisentanglerConfig)
    loss: LossSettings = field(default_factory=LossSettings)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    output_dir: str = "runs"

    def validate(self) -> None:
        """Check every invariant before any side effect.

        Raises:
            ConfigError: On the first violated invariant
        """
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"Unsupported config version {self.version!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == "classification" and (self.num_classes is None or self.num_classes < 2):
            raise ConfigError("classification needs num_classes >= 2")
        if self.dataset.synthetic is not None and self.task != "regression":
            raise ConfigError("synthetic datasets are regression tasks")
        self.dataset.validate()
        self.encoder.validate()
        if self.encoder.d_model % FUSION_HEADS != 0:
            raise ConfigError(f"encoder.d_model must be divisible by {FUSION_HEADS} fusion heads")
        self.disentangler.validate(self.encoder.d_model)
        self.loss.validate()
        self.schedule.validate()
        self.probe.validate()

    def fingerprint(self, feature_dims: Dict[Modality, int]) -> str:
        """SHA-256 of the canonical JSON of everything that shapes the model."""
        shaping = {
            "encoder": dataclasses.asdict(self.encoder),
            "disentangler": dataclasses.asdict(self.disentangler),
            "task": self.task,
            "num_classes": self.num_classes,
            "feature_dims": {m.key: int(feature_dims[m]) for m in MODALITIES},
            "fusion": list(FUSION_LABELS),
        }
        canonical = json.dumps(shaping, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """Build a config, rejecting unknown keys and wrongly typed values."""
        return _build(cls, data, "")

    def to_file(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Load a JSON config; a relative manifest path is resolved against the file.

        Raises:
            ConfigError: Missing file, invalid JSON, unknown keys or bad types
        """
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"Config file '{path}' not found")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file '{path}' is not valid JSON: {e}")
        config = cls.from_dict(data)
        manifest = config.dataset.manifest
        if manifest is not None and not Path(manifest).is_absolute():
            config.dataset.manifest = str((path.parent / manifest).resolve())
        return config


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _build(cls: Any, data: Any, path: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"'{path or 'config'}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"Unknown config key '{_join(path, key)}'")
    hints = typing.get_type_hints(cls)
    return cls(**{key: _coerce(hints[key], value, _join(path, key)) for key, value in data.items()})


def _coerce(tp: Any, value: Any, path: str) -> Any:
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is Union:
        if value is None:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{path}' must be a list")
        if origin is tuple:
            if len(value) != len(args):
                raise ConfigError(f"'{path}' must have {len(args)} entries")
            return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
        return [_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"'{path}' must be an object")
        return {str(k): _coerce(args[1], v, _join(path, str(k))) for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"'{path}' must be true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{path}' must be an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' must be a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"'{path}' must be a string")
        return value
    return value


@dataclass
class RunSettings:
    """Per-invocation settings: CLI flag > environment > config."""

    output_dir: Optional[Path] = None
    log_database_path: Optional[Path] = None
    logs_off: bool = False
    threads: int = 1

    @classmethod
    def from_env(cls) -> "RunSettings":
        """Create settings from environment variables."""
        try:
            threads = int(os.getenv("TRIDIRA_THREADS", "1"))
        except ValueError:
            raise ConfigError(f"TRIDIRA_THREADS must be an integer, got {os.getenv('TRIDIRA_THREADS')!r}")
        return cls(
            output_dir=Path(p) if (p := os.getenv("TRIDIRA_OUT")) else None,
            log_database_path=Path(p) if (p := os.getenv("TRIDIRA_LOG_DB")) else None,
            logs_off=os.getenv("TRIDIRA_LOGS_OFF") == "1",
            threads=threads,
        )

    def merge_with_args(
        self,
        out: Optional[str] = None,
        log_db_path: Optional[str] = None,
        no_log: Optional[bool] = None,
        threads: Optional[int] = None,
    ) -> "RunSettings":
        """Merge settings with command line arguments."""
        return RunSettings(
            output_dir=Path(out) if out else self.output_dir,
            log_database_path=Path(log_db_path) if log_db_path else self.log_database_path,
            logs_off=no_log if no_log else self.logs_off,
            threads=threads if threads is not None else self.threads,
        )

    def resolve_output_dir(self, config: ExperimentConfig) -> Path:
        return self.output_dir if self.output_dir is not None else Path(config.output_dir)

    def resolve_log_path(self, output_dir: Path) -> Optional[Path]:
        if self.logs_off:
            return None
        return self.log_database_path or get_logs_db_path(output_dir)

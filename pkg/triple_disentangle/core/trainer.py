"""Two-stage training, parameter updates, checkpoints and loss traces."""

import copy
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import sqlite_utils
import torch
from torch import nn

from ..data.batching import make_batches
from ..data.features import Modality
from ..data.manifest import UtteranceRecord, load_records, read_manifest, split_records
from ..data.synthetic import generate_synthetic
from ..utils.exceptions import (
    ConfigError,
    FeatureFileError,
    FingerprintMismatchError,
    PreconditionError,
    TrainingAbortedError,
    ValidationError,
)
from ..utils.logging import info, log_loss_row, log_metrics, start_run, warn
from ..utils.types import LossRow
from .evaluator import MetricReport, average_reports, evaluate, selection_score
from .losses import COMPONENTS, LossSettings
from .model import TripleDisentangleModel

if TYPE_CHECKING:
    from ..config.settings import ExperimentConfig

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
CHECKPOINT_FORMAT = 1
TRACE_COLUMNS = ("epoch",) + COMPONENTS + ("total",)


@dataclass
class TrainSchedule:
    """Epoch budgets and optimizer settings of both stages."""

    stage1_epochs: int = 10
    stage2_epochs: int = 40
    learning_rate: float = 8e-5
    weight_decay: float = 5e-5
    batch_size: int = 64
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    grad_clip: Optional[float] = None
    shuffle: bool = True

    def validate(self) -> None:
        if self.stage1_epochs < 0:
            raise ConfigError(f"schedule.stage1_epochs must be >= 0, got {self.stage1_epochs}")
        if self.stage2_epochs < 1:
            raise ConfigError(f"schedule.stage2_epochs must be >= 1, got {self.stage2_epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"schedule.learning_rate must be positive, got {self.learning_rate}")
        if not self.weight_decay >= 0:
            raise ConfigError(f"schedule.weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"schedule.batch_size must be >= 1, got {self.batch_size}")
        if not self.seeds:
            raise ConfigError("schedule.seeds must not be empty")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError(f"schedule.grad_clip must be positive, got {self.grad_clip}")


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)


def make_optimizer(
    parameters: Iterable[nn.Parameter], learning_rate: float, weight_decay: float
) -> torch.optim.AdamW:
    """AdamW with β = (0.9, 0.999) and ε = 1e-8."""
    return torch.optim.AdamW(
        parameters, lr=learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS, weight_decay=weight_decay
    )


def update_step(
    optimizer: torch.optim.Optimizer,
    named_parameters: Iterable[Tuple[str, nn.Parameter]],
    grad_clip: Optional[float] = None,
) -> None:
    """Check gradients, optionally clip them, and apply one optimizer step.

    Raises:
        TrainingAbortedError: If a gradient holds NaN/Inf, naming the parameter
    """
    params = []
    for name, param in named_parameters:
        if param.grad is None:
            continue
        if not bool(torch.isfinite(param.grad).all()):
            raise TrainingAbortedError(f"non-finite gradient in parameter '{name}'")
        params.append(param)
    if grad_clip is not None:
        nn.utils.clip_grad_norm_(params, grad_clip)
    optimizer.step()


@dataclass
class Checkpoint:
    """Model parameters plus schedule position, generator state and fingerprint."""

    model_state: Dict[str, torch.Tensor]
    stage: int
    epoch: int
    seed: int
    fingerprint: str
    rng_state: torch.Tensor
    optimizer_state: Optional[Dict[str, Any]] = None
    trained: bool = True
    score: Optional[float] = None
    # resume state only: loss rows so far and the best checkpoint seen
    history: List[Dict[str, float]] = field(default_factory=list)
    best: Optional["Checkpoint"] = None

    @classmethod
    def capture(
        cls,
        model: nn.Module,
        stage: int,
        epoch: int,
        seed: int,
        fingerprint: str,
        optimizer: Optional[torch.optim.Optimizer] = None,
        trained: bool = True,
        score: Optional[float] = None,
    ) -> "Checkpoint":
        return cls(
            model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
            stage=stage,
            epoch=epoch,
            seed=seed,
            fingerprint=fingerprint,
            rng_state=torch.get_rng_state(),
            optimizer_state=copy.deepcopy(optimizer.state_dict()) if optimizer is not None else None,
            trained=trained,
            score=score,
        )

    def restore(
        self,
        model: nn.Module,
        optimizer: Optional[torch.optim.Optimizer] = None,
        restore_rng: bool = False,
    ) -> None:
        model.load_state_dict(self.model_state)
        if optimizer is not None and self.optimizer_state is not None:
            optimizer.load_state_dict(self.optimizer_state)
        if restore_rng:
            torch.set_rng_state(self.rng_state)

    def check_fingerprint(self, expected: str, allow_mismatch: bool = False) -> None:
        if self.fingerprint == expected:
            return
        message = f"checkpoint fingerprint {self.fingerprint[:12]} does not match config {expected[:12]}"
        if not allow_mismatch:
            raise FingerprintMismatchError(message)
        warn(message)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": CHECKPOINT_FORMAT,
            "model_state": self.model_state,
            "stage": self.stage,
            "epoch": self.epoch,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "rng_state": self.rng_state,
            "optimizer_state": self.optimizer_state,
            "trained": self.trained,
            "score": self.score,
            "history": [dict(row) for row in self.history],
            "best": self.best.to_dict() if self.best is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], source: str = "checkpoint") -> "Checkpoint":
        data = dict(data)
        version = data.pop("format_version", None)
        if version != CHECKPOINT_FORMAT:
            raise FeatureFileError(f"{source} has unsupported format {version!r}")
        best = data.pop("best", None)
        checkpoint = cls(**data)
        if best is not None:
            checkpoint.best = cls.from_dict(best, source)
        return checkpoint

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        try:
            torch.save(self.to_dict(), path)
        except OSError as e:
            raise FeatureFileError(f"Cannot write checkpoint '{path}': {e}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        """Read a checkpoint written by save.

        Raises:
            PreconditionError: Missing file
            FeatureFileError: Unreadable file or unsupported format version
        """
        path = Path(path)
        if not path.exists():
            raise PreconditionError(f"Checkpoint '{path}' does not exist")
        try:
            data = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as e:
            raise FeatureFileError(f"Cannot read checkpoint '{path}': {e}")
        if not isinstance(data, dict):
            raise FeatureFileError(f"Checkpoint '{path}' is not a checkpoint")
        return cls.from_dict(data, f"Checkpoint '{path}'")


@dataclass
class RunLog:
    """A run row in the sqlite log; every method is a no-op without a database."""

    db: Optional[sqlite_utils.Database] = None
    run_id: Optional[int] = None

    @classmethod
    def start(
        cls,
        db: Optional[sqlite_utils.Database],
        command: str,
        seed: Optional[int],
        fingerprint: str,
        output_dir: Path,
    ) -> "RunLog":
        return cls(db, start_run(db, command, seed, fingerprint, output_dir))

    def loss(self, stage: int, row: LossRow) -> None:
        log_loss_row(self.db, self.run_id, stage, dict(row))

    def metrics(self, split: str, report: MetricReport) -> None:
        log_metrics(self.db, self.run_id, split, report.as_dict())


@dataclass
class ExperimentData:
    """Loaded records grouped by split plus the dataset declarations."""

    task: str
    num_classes: Optional[int]
    feature_dims: Dict[Modality, int]
    splits: Dict[str, List[UtteranceRecord]]

    @property
    def train(self) -> List[UtteranceRecord]:
        return self.splits.get("train", [])

    @property
    def valid(self) -> List[UtteranceRecord]:
        return self.splits.get("valid", [])

    @property
    def test(self) -> List[UtteranceRecord]:
        return self.splits.get("test", [])

    def require(self, *splits: str) -> None:
        for name in splits:
            if not self.splits.get(name):
                raise ValidationError(f"dataset has no {name} split")

    def selection_records(self) -> List[UtteranceRecord]:
        if self.valid:
            return self.valid
        warn("no valid split; selecting checkpoints on the train split")
        return self.train


def load_experiment_data(config: "ExperimentConfig") -> ExperimentData:
    """Generate or read the configured dataset.

    Raises:
        ConfigError: If the manifest's task or class count disagrees with the config
    """
    if config.dataset.synthetic is not None:
        spec = config.dataset.synthetic
        records = generate_synthetic(spec).records
        return ExperimentData("regression", None, spec.modality_dims(), split_records(records))

    manifest = read_manifest(config.dataset.manifest or "")
    header = manifest.header
    if header.task != config.task:
        raise ConfigError(f"manifest task {header.task!r} differs from config task {config.task!r}")
    if header.task == "classification" and header.num_classes != config.num_classes:
        raise ConfigError(
            f"manifest declares {header.num_classes} classes, config {config.num_classes}"
        )
    records = load_records(manifest)
    return ExperimentData(header.task, header.num_classes, dict(header.feature_dims), split_records(records))


def build_model(config: "ExperimentConfig", feature_dims: Dict[Modality, int]) -> TripleDisentangleModel:
    return TripleDisentangleModel(
        config.encoder, config.disentangler, feature_dims, config.task, config.num_classes
    )


def write_loss_trace(rows: Sequence[LossRow], path: Union[str, Path]) -> None:
    """Per-epoch loss trace as CSV with a fixed column order."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        for row in rows:
            writer.writerow([row["epoch"]] + [f"{row[c]:.10g}" for c in TRACE_COLUMNS[1:]])  # type: ignore[literal-required]


def read_loss_trace(path: Union[str, Path]) -> List[Dict[str, float]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]


def _stage_parameters(model: TripleDisentangleModel, stage: int) -> List[Tuple[str, nn.Parameter]]:
    if stage == 2:
        return list(model.named_parameters())
    prefixes = ("extractor.", "fusion.", "head.")
    return [(n, p) for n, p in model.named_parameters() if n.startswith(prefixes)]


def _run_epoch(
    model: TripleDisentangleModel,
    records: Sequence[UtteranceRecord],
    stage: int,
    epoch: int,
    seed: int,
    schedule: TrainSchedule,
    losses: LossSettings,
    optimizer: torch.optim.Optimizer,
    named: List[Tuple[str, nn.Parameter]],
) -> LossRow:
    model.train()
    sums = {name: 0.0 for name in TRACE_COLUMNS[1:]}
    count = 0
    dtype = next(model.parameters()).dtype
    batches = make_batches(
        records, schedule.batch_size, seed=seed * 1_000_003 + stage * 10_007 + epoch, shuffle=schedule.shuffle
    )
    for step, batch in enumerate(batches, start=1):
        batch = batch.to(dtype)
        output = model.run(batch, stage)
        try:
            report = model.compute_losses(output, batch.labels, losses)
        except TrainingAbortedError as e:
            raise TrainingAbortedError(f"stage {stage} epoch {epoch} step {step}: {e}")
        optimizer.zero_grad()
        report.total.backward()
        try:
            update_step(optimizer, named, schedule.grad_clip)
        except TrainingAbortedError as e:
            raise TrainingAbortedError(f"stage {stage} epoch {epoch} step {step}: {e}")
        for name, value in report.as_floats().items():
            sums[name] += value * len(batch)
        count += len(batch)
    row = {name: total / count for name, total in sums.items()}
    return LossRow(epoch=epoch, **row)  # type: ignore[typeddict-item]


def _train_stage(
    model: TripleDisentangleModel,
    data: ExperimentData,
    stage: int,
    epochs: int,
    schedule: TrainSchedule,
    losses: LossSettings,
    seed: int,
    fingerprint: str,
    log: RunLog,
    trace_path: Optional[Path],
    resume: Optional[Checkpoint] = None,
    resume_path: Optional[Path] = None,
) -> Checkpoint:
    named = _stage_parameters(model, stage)
    optimizer = make_optimizer([p for _, p in named], schedule.learning_rate, schedule.weight_decay)
    selection = data.selection_records()
    best: Optional[Checkpoint] = None
    rows: List[LossRow] = []
    start = 1
    if resume is not None:
        if resume.stage != stage or resume.seed != seed:
            raise PreconditionError(
                f"resume state is stage {resume.stage} seed {resume.seed}, expected stage {stage} seed {seed}"
            )
        resume.restore(model, optimizer, restore_rng=True)
        rows = [LossRow(**row) for row in resume.history]  # type: ignore[typeddict-item]
        best = resume.best
        start = resume.epoch + 1
        info(f"stage {stage} seed {seed}: resuming after epoch {resume.epoch}")
    for epoch in range(start, epochs + 1):
        row = _run_epoch(model, data.train, stage, epoch, seed, schedule, losses, optimizer, named)
        rows.append(row)
        log.loss(stage, row)
        report = evaluate(model, selection, schedule.batch_size, stage)
        score = selection_score(report, model.task)
        info(
            f"stage {stage} seed {seed} epoch {epoch}/{epochs}: "
            f"total {row['total']:.4f} task {row['task']:.4f} valid {score:.4f}"
        )
        if best is None or best.score is None or score > best.score:
            best = Checkpoint.capture(model, stage, epoch, seed, fingerprint, optimizer, score=score)
        if resume_path is not None:
            state = Checkpoint.capture(model, stage, epoch, seed, fingerprint, optimizer, score=score)
            state.history = [dict(r) for r in rows]
            state.best = best
            state.save(resume_path)
    if trace_path is not None:
        write_loss_trace(rows, trace_path)
    if best is None:
        raise PreconditionError(f"resume state already past the stage-{stage} budget of {epochs} epochs")
    return best


def train_stage1(
    model: TripleDisentangleModel,
    data: ExperimentData,
    schedule: TrainSchedule,
    losses: LossSettings,
    seed: int = 0,
    fingerprint: str = "",
    log: Optional[RunLog] = None,
    trace_path: Optional[Path] = None,
    resume: Optional[Checkpoint] = None,
    resume_path: Optional[Path] = None,
) -> Checkpoint:
    """Train encoders, fusion and FC_c on the task loss over the three x̂ tokens.

    Returns the best checkpoint on the validation split; with zero epochs the
    untouched initial model is returned.
    """
    data.require("train")
    if schedule.stage1_epochs == 0:
        return Checkpoint.capture(model, 1, 0, seed, fingerprint, trained=False)
    return _train_stage(
        model, data, 1, schedule.stage1_epochs, schedule, losses, seed, fingerprint,
        log or RunLog(), trace_path, resume, resume_path,
    )


def train_stage2(
    model: TripleDisentangleModel,
    checkpoint: Optional[Checkpoint],
    data: ExperimentData,
    schedule: TrainSchedule,
    losses: LossSettings,
    seed: int = 0,
    fingerprint: str = "",
    log: Optional[RunLog] = None,
    trace_path: Optional[Path] = None,
    resume: Optional[Checkpoint] = None,
    resume_path: Optional[Path] = None,
) -> Checkpoint:
    """Start from the stage-1 weights, reinitialize the disentangler and FC_m
    from `seed`, and optimize the full objective.

    With `resume` (a state written to `resume_path` by an earlier call) the
    model, optimizer, generator state, loss rows and best checkpoint are
    restored and training continues after the saved epoch.

    Raises:
        PreconditionError: Without a stage-1 checkpoint
    """
    if checkpoint is None or checkpoint.stage != 1:
        raise PreconditionError("stage 2 needs a stage-1 checkpoint")
    data.require("train")
    checkpoint.restore(model)
    seed_everything(seed)
    model.reset_stage2_modules()
    return _train_stage(
        model, data, 2, schedule.stage2_epochs, schedule, losses, seed, fingerprint,
        log or RunLog(), trace_path, resume, resume_path,
    )


@dataclass
class TrainingSummary:
    """Test metrics per seed and their mean."""

    per_seed: Dict[int, MetricReport]
    mean: MetricReport

    def to_csv(self, path: Union[str, Path]) -> None:
        names = list(self.mean.present())
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["seed"] + names)
            for seed, report in self.per_seed.items():
                values = report.as_dict()
                writer.writerow([seed] + [_cell(values[n]) for n in names])
            mean = self.mean.as_dict()
            writer.writerow(["mean"] + [_cell(mean[n]) for n in names])


def _cell(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def _load_resume_state(path: Path, fingerprint: str) -> Optional[Checkpoint]:
    if not path.exists():
        return None
    state = Checkpoint.load(path)
    state.check_fingerprint(fingerprint)
    return state


def run_training(
    config: "ExperimentConfig",
    data: ExperimentData,
    out_dir: Path,
    db: Optional[sqlite_utils.Database] = None,
    stage1_only: bool = False,
) -> Optional[TrainingSummary]:
    """Stage 1 once (or reused from <out>/stage1.pt), then stage 2 per seed.

    Writes stage1.pt, loss_trace_stage1.csv, seed_<s>/{checkpoint.pt,
    loss_trace.csv, metrics.json} and summary.csv under out_dir. The
    per-epoch states stage1_state.pt and seed_<s>/state.pt let an
    interrupted run continue where it stopped.
    """
    schedule = config.schedule
    data.require("train", "test")
    fingerprint = config.fingerprint(data.feature_dims)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage1_path = out_dir / "stage1.pt"

    if stage1_path.exists():
        stage1 = Checkpoint.load(stage1_path)
        stage1.check_fingerprint(fingerprint)
        info(f"Resuming from stage-1 checkpoint {stage1_path}")
    else:
        seed = schedule.seeds[0]
        seed_everything(seed)
        model = build_model(config, data.feature_dims)
        log = RunLog.start(db, "train:stage1", seed, fingerprint, out_dir)
        state_path = out_dir / "stage1_state.pt"
        stage1 = train_stage1(
            model, data, schedule, config.loss, seed, fingerprint, log,
            out_dir / "loss_trace_stage1.csv",
            _load_resume_state(state_path, fingerprint), state_path,
        )
        stage1.save(stage1_path)
    if stage1_only:
        info(f"Stopped after stage 1; checkpoint at {stage1_path}")
        return None

    reports: Dict[int, MetricReport] = {}
    for seed in schedule.seeds:
        seed_dir = out_dir / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        seed_everything(seed)
        model = build_model(config, data.feature_dims)
        log = RunLog.start(db, "train:stage2", seed, fingerprint, out_dir)
        state_path = seed_dir / "state.pt"
        best = train_stage2(
            model, stage1, data, schedule, config.loss, seed, fingerprint, log,
            seed_dir / "loss_trace.csv",
            _load_resume_state(state_path, fingerprint), state_path,
        )
        best.save(seed_dir / "checkpoint.pt")
        best.restore(model)
        report = evaluate(model, data.test, schedule.batch_size)
        report.to_file(seed_dir / "metrics.json")
        log.metrics("test", report)
        reports[seed] = report

    summary = TrainingSummary(reports, average_reports(list(reports.values())))
    summary.to_csv(out_dir / "summary.csv")
    return summary


def run_sweep(
    points: Sequence[Tuple[Dict[str, Any], "ExperimentConfig"]],
    out_dir: Path,
    db: Optional[sqlite_utils.Database] = None,
) -> List[Tuple[Dict[str, Any], MetricReport]]:
    """Train every grid point into <out>/sweep/<index>/ and tabulate the means."""
    sweep_dir = out_dir / "sweep"
    results = []
    for index, (overrides, config) in enumerate(points):
        info(f"sweep point {index}: {json.dumps(overrides, sort_keys=True)}")
        data = load_experiment_data(config)
        summary = run_training(config, data, sweep_dir / str(index), db)
        assert summary is not None
        results.append((overrides, summary.mean))

    names: List[str] = []
    for _, report in results:
        names.extend(n for n in report.present() if n not in names)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    with open(sweep_dir / "sweep_summary.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "overrides"] + names)
        for index, (overrides, report) in enumerate(results):
            values = report.as_dict()
            writer.writerow([index, json.dumps(overrides, sort_keys=True)] + [_cell(values[n]) for n in names])
    return results

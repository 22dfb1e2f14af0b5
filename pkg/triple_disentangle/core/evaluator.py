"""Metrics, representation export, third-party probes, attention traces,
2-D projections and per-sample explanations."""

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from sklearn.decomposition import PCA
from sklearn.metrics import accuracy_score, f1_score
from torch import nn

from ..data.batching import make_batches
from ..data.features import MODALITIES, FeatureSequence, Modality, read_feature_file, write_feature_file
from ..data.manifest import UtteranceRecord
from ..utils.exceptions import ArchiveLookupError, ConfigError, ValidationError
from ..utils.logging import warn
from ..utils.types import ExplainRow
from .fusion import AttentionTrace
from .model import REPRESENTATION_NAMES, REPRESENTATIONS, TripleDisentangleModel

PROBE_TASKS = ("sentiment", "modality")
ARCHIVE_MANIFEST = "archive.json"


@dataclass
class MetricReport:
    """Evaluation metrics; fields a task does not define stay None."""

    MAE: Optional[float] = None
    Corr: Optional[float] = None
    Acc2_nonneg: Optional[float] = None
    Acc2_pos: Optional[float] = None
    F1_nonneg: Optional[float] = None
    F1_pos: Optional[float] = None
    Acc7: Optional[float] = None
    AccC: Optional[float] = None
    F1_weighted: Optional[float] = None

    def as_dict(self) -> Dict[str, Optional[float]]:
        return asdict(self)

    def present(self) -> Dict[str, float]:
        return {k: v for k, v in self.as_dict().items() if v is not None}

    def to_file(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "MetricReport":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class ProbeResult:
    representation: str
    probe_task: str
    report: MetricReport


def _pearson(predictions: np.ndarray, labels: np.ndarray) -> float:
    if np.array_equal(predictions, labels):
        return 1.0
    if np.std(predictions) == 0 or np.std(labels) == 0:
        return 0.0
    return float(np.clip(np.corrcoef(predictions, labels)[0, 1], -1.0, 1.0))


def _binary_scores(y_true: np.ndarray, y_pred: np.ndarray) -> Tuple[float, float]:
    accuracy = 100.0 * accuracy_score(y_true, y_pred)
    f1 = 100.0 * f1_score(y_true, y_pred, average="weighted", zero_division=0)
    return float(accuracy), float(f1)


def compute_metrics(predictions: np.ndarray, labels: np.ndarray, task: str) -> MetricReport:
    """Metrics of one split.

    Regression: MAE, Corr, both Acc-2/F1 binarizations and Acc-7.
    Classification (predictions are class indices or probability rows):
    accuracy and weighted F1. Accuracies and F1 are percentages.

    Raises:
        ValidationError: Empty or mismatched inputs
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValidationError("compute_metrics needs at least one sample")
    if task == "classification":
        if predictions.ndim == 2:
            predictions = predictions.argmax(axis=1)
        if predictions.shape != labels.shape:
            raise ValidationError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
        acc, f1 = _binary_scores(labels.astype(int), predictions.astype(int))
        return MetricReport(AccC=acc, F1_weighted=f1)

    predictions = predictions.reshape(-1)
    labels = labels.reshape(-1)
    if predictions.shape != labels.shape:
        raise ValidationError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")

    report = MetricReport(
        MAE=float(np.mean(np.abs(labels - predictions))),
        Corr=_pearson(predictions, labels),
    )
    report.Acc2_nonneg, report.F1_nonneg = _binary_scores(labels >= 0, predictions >= 0)
    nonzero = labels != 0
    if nonzero.any():
        report.Acc2_pos, report.F1_pos = _binary_scores(labels[nonzero] > 0, predictions[nonzero] > 0)
    bucket_true = np.clip(np.round(labels), -3, 3)
    bucket_pred = np.clip(np.round(predictions), -3, 3)
    report.Acc7 = float(100.0 * np.mean(bucket_true == bucket_pred))
    return report


def average_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Field-wise arithmetic mean; a field absent from every report stays None."""
    if not reports:
        raise ValidationError("average_reports needs at least one report")
    averaged = MetricReport()
    for f in fields(MetricReport):
        values = [getattr(r, f.name) for r in reports if getattr(r, f.name) is not None]
        if values:
            setattr(averaged, f.name, float(np.mean(values)))
    return averaged


def selection_score(report: MetricReport, task: str) -> float:
    """Higher is better: −MAE for regression, accuracy for classification."""
    if task == "regression":
        return -float(report.MAE if report.MAE is not None else math.inf)
    return float(report.AccC or 0.0)


@torch.no_grad()
def predict_records(
    model: TripleDisentangleModel,
    records: Sequence[UtteranceRecord],
    batch_size: int = 64,
    stage: int = 2,
    trace: Optional[AttentionTrace] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Model predictions and labels for records, in record order."""
    was_training = model.training
    model.eval()
    predictions, labels = [], []
    for batch in make_batches(records, batch_size):
        output = model.run(batch, stage)
        predictions.append(output.prediction.cpu().numpy())
        labels.append(batch.labels.cpu().numpy())
        if trace is not None:
            trace.update(output.attention)
    model.train(was_training)
    return np.concatenate(predictions), np.concatenate(labels)


def evaluate(
    model: TripleDisentangleModel,
    records: Sequence[UtteranceRecord],
    batch_size: int = 64,
    stage: int = 2,
) -> MetricReport:
    predictions, labels = predict_records(model, records, batch_size, stage)
    return compute_metrics(predictions, labels, model.task)


def export_attention_trace(
    model: TripleDisentangleModel,
    records: Sequence[UtteranceRecord],
    batch_size: int = 64,
    path: Optional[Path] = None,
    stage: int = 2,
) -> AttentionTrace:
    """Dataset-averaged fusion attention of the given stage's forward pass;
    written as a text grid when path is given."""
    trace: Optional[AttentionTrace] = None
    with torch.no_grad():
        model.eval()
        for batch in make_batches(records, batch_size):
            output = model.run(batch, stage)
            if trace is None:
                trace = AttentionTrace(output.labels)
            trace.update(output.attention)
    if trace is None:
        raise ValidationError("no records to trace")
    if path is not None:
        trace.to_text(path)
    return trace


class RepresentationArchive:
    """Exported pooled representations of one or more splits.

    Layout: <root>/<split>/archive.json plus one TDRF file per
    (representation, modality) whose rows are the samples.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def _meta(self, split: str) -> Dict:
        path = self.root / split / ARCHIVE_MANIFEST
        if not path.exists():
            raise ArchiveLookupError(f"archive has no split {split!r}")
        return json.loads(path.read_text(encoding="utf-8"))

    def splits(self) -> List[str]:
        return sorted(p.parent.name for p in self.root.glob(f"*/{ARCHIVE_MANIFEST}"))

    def representations(self, split: str) -> List[str]:
        return list(self._meta(split)["representations"])

    def ids(self, split: str) -> List[str]:
        return list(self._meta(split)["ids"])

    def labels(self, split: str) -> np.ndarray:
        return np.asarray(self._meta(split)["labels"])

    def task(self, split: str) -> str:
        return str(self._meta(split)["task"])

    def trained(self, split: str) -> bool:
        return bool(self._meta(split)["trained"])

    def matrix(self, split: str, representation: str, modality: Modality) -> np.ndarray:
        """(samples, d_model) float32 matrix.

        Raises:
            ArchiveLookupError: Unknown split or representation
        """
        if representation not in self.representations(split):
            raise ArchiveLookupError(f"representation {representation!r} not in archive split {split!r}")
        path = self.root / split / f"{representation}_{modality.short}.tdrf"
        return read_feature_file(path).values


@torch.no_grad()
def export_representations(
    model: TripleDisentangleModel,
    records: Sequence[UtteranceRecord],
    split: str,
    root: Union[str, Path],
    batch_size: int = 64,
    trained: bool = True,
) -> RepresentationArchive:
    """Write r*, r∩u, u* and x̂ of every modality for one split."""
    if not trained:
        warn("exporting representations from an untrained model")
    if not records:
        raise ValidationError(f"split {split!r} is empty")
    names = REPRESENTATIONS if model.uses_disentangler else ("x_hat",)
    model.eval()
    chunks: Dict[Tuple[str, Modality], List[np.ndarray]] = {
        (name, m): [] for name in names for m in MODALITIES
    }
    for batch in make_batches(records, batch_size):
        output = model(batch)
        for name in names:
            for m in MODALITIES:
                chunks[(name, m)].append(output.representation(name, m).cpu().numpy())

    directory = Path(root) / split
    directory.mkdir(parents=True, exist_ok=True)
    for (name, m), parts in chunks.items():
        write_feature_file(FeatureSequence.full(m, np.concatenate(parts)), directory / f"{name}_{m.short}.tdrf")
    meta = {
        "split": split,
        "task": model.task,
        "d_model": model.d_model,
        "trained": trained,
        "representations": list(names),
        "ids": [r.id for r in records],
        "labels": [r.label for r in records],
    }
    (directory / ARCHIVE_MANIFEST).write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    return RepresentationArchive(root)


@dataclass
class ProbeConfig:
    """Two-layer probe trained on frozen representations."""

    hidden: Optional[int] = None
    epochs: int = 50
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 128
    seed: int = 0

    def validate(self) -> None:
        if self.hidden is not None and self.hidden < 1:
            raise ConfigError("probe.hidden must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("probe.epochs and probe.batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("probe.learning_rate must be positive")


def _probe_data(
    archive: RepresentationArchive, split: str, representation: str, probe_task: str
) -> Tuple[np.ndarray, np.ndarray]:
    # modalities are stacked as extra samples
    features = np.concatenate([archive.matrix(split, representation, m) for m in MODALITIES])
    n = len(archive.ids(split))
    if probe_task == "modality":
        targets = np.repeat(np.array([int(m) for m in MODALITIES]), n)
    else:
        targets = np.tile(archive.labels(split), len(MODALITIES))
    return features, targets


def run_probe(
    archive: RepresentationArchive,
    representation: str,
    probe_task: str,
    cfg: Optional[ProbeConfig] = None,
    train_split: str = "train",
    test_split: str = "test",
) -> ProbeResult:
    """Train a fresh 2-layer probe on one frozen representation and test it.

    Raises:
        ArchiveLookupError: Representation or split missing from the archive
        ValidationError: Unknown probe task
    """
    cfg = cfg or ProbeConfig()
    if probe_task not in PROBE_TASKS:
        raise ValidationError(f"Unknown probe task {probe_task!r}; expected one of {PROBE_TASKS}")
    task = "classification" if probe_task == "modality" else archive.task(train_split)
    x_train, y_train = _probe_data(archive, train_split, representation, probe_task)
    x_test, y_test = _probe_data(archive, test_split, representation, probe_task)

    if task == "regression":
        out_dim = 1
    elif probe_task == "modality":
        out_dim = len(MODALITIES)
    else:
        out_dim = int(max(y_train.max(), y_test.max())) + 1
    d = x_train.shape[1]

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        probe = nn.Sequential(nn.Linear(d, cfg.hidden or d), nn.ReLU(), nn.Linear(cfg.hidden or d, out_dim))
        optimizer = torch.optim.AdamW(probe.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
        inputs = torch.from_numpy(x_train)
        if task == "regression":
            targets = torch.from_numpy(y_train.astype(np.float32))
        else:
            targets = torch.from_numpy(y_train.astype(np.int64))
        generator = torch.Generator().manual_seed(cfg.seed)
        for _ in range(cfg.epochs):
            order = torch.randperm(len(inputs), generator=generator)
            for start in range(0, len(order), cfg.batch_size):
                index = order[start:start + cfg.batch_size]
                out = probe(inputs[index])
                if task == "regression":
                    loss = nn.functional.mse_loss(out.squeeze(-1), targets[index])
                else:
                    loss = nn.functional.cross_entropy(out, targets[index])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

    with torch.no_grad():
        out = probe(torch.from_numpy(x_test))
    predictions = out.squeeze(-1).numpy() if task == "regression" else out.argmax(dim=1).numpy()
    return ProbeResult(representation, probe_task, compute_metrics(predictions, y_test, task))


def write_probe_table(results: Sequence[ProbeResult], path: Union[str, Path], banner: Optional[str] = None) -> None:
    """CSV with one row per (representation, probe task)."""
    names = [f.name for f in fields(MetricReport)]
    with open(path, "w", encoding="utf-8", newline="") as f:
        if banner:
            f.write(f"# {banner}\n")
        writer = csv.writer(f)
        writer.writerow(["representation", "probe_task"] + names)
        for result in results:
            values = result.report.as_dict()
            writer.writerow(
                [REPRESENTATION_NAMES.get(result.representation, result.representation), result.probe_task]
                + ["" if values[n] is None else f"{values[n]:.4f}" for n in names]
            )


@dataclass
class Projection:
    ids: List[str]
    groups: List[str]
    coords: np.ndarray

    def to_text(self, path: Union[str, Path]) -> None:
        lines = ["id group x y"]
        for sample_id, group, (x, y) in zip(self.ids, self.groups, self.coords):
            lines.append(f"{sample_id} {group} {x:.6f} {y:.6f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_projection(
    archive: RepresentationArchive,
    split: str = "test",
    representations: Sequence[str] = ("r_star", "u_star"),
    method: str = "pca2d",
) -> Projection:
    """Top-2 principal components of the pooled representation matrix.

    Rows are every (representation, modality, sample) combination; the group
    label is "<representation>/<modality>".

    Raises:
        ValidationError: Unknown method or fewer than 3 rows
    """
    if method != "pca2d":
        raise ValidationError(f"Unknown projection method {method!r}")
    ids = archive.ids(split)
    blocks, groups, row_ids = [], [], []
    for name in representations:
        for m in MODALITIES:
            blocks.append(archive.matrix(split, name, m))
            groups.extend([f"{name}/{m.key}"] * len(ids))
            row_ids.extend(ids)
    data = np.concatenate(blocks).astype(np.float64)
    return Projection(row_ids, groups, project_pca2d(data))


def project_pca2d(data: np.ndarray) -> np.ndarray:
    if data.shape[0] < 3:
        raise ValidationError(f"projection needs at least 3 samples, got {data.shape[0]}")
    components = min(2, data.shape[1])
    coords = PCA(n_components=components, svd_solver="full").fit_transform(data)
    if components < 2:
        coords = np.hstack([coords, np.zeros((coords.shape[0], 1))])
    return coords


@torch.no_grad()
def explain_samples(
    model: TripleDisentangleModel,
    records: Sequence[UtteranceRecord],
    ids: Sequence[str],
) -> List[ExplainRow]:
    """FC_c prediction of the fused vector and of every single representation.

    Classification predictions are reported as the argmax class.

    Raises:
        ValidationError: Unknown id, or a model without the disentangler
    """
    if not model.uses_disentangler:
        raise ValidationError("explain needs a model with the disentangler enabled")
    by_id = {r.id: r for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ValidationError(f"Unknown record id(s): {', '.join(missing)}")
    chosen = [by_id[i] for i in ids]
    model.eval()

    def as_values(out: torch.Tensor) -> List[float]:
        if model.task == "classification":
            out = out.argmax(dim=-1).to(torch.float64)
        return out.reshape(-1).tolist()

    def readout(values: torch.Tensor) -> List[float]:
        return as_values(model.head(values))

    rows: List[ExplainRow] = []
    for batch in make_batches(chosen, len(chosen)):
        output = model(batch)
        fused_values = as_values(output.prediction)
        per_part = {
            (name, m): readout(output.representation(name, m))
            for name in ("r_star", "r_cap_u", "u_star")
            for m in MODALITIES
        }
        for i, record in enumerate(chosen):
            for (name, m), values in per_part.items():
                rows.append(ExplainRow(
                    id=record.id,
                    label=float(record.label),
                    fused=float(fused_values[i]),
                    representation=REPRESENTATION_NAMES[name],
                    modality=m.key,
                    prediction=float(values[i]),
                ))
    return rows


def write_explain_rows(rows: Sequence[ExplainRow], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["id", "label", "fused", "representation", "modality", "prediction"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)

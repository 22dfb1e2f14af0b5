"""Tests for metrics, representation archives, probes and explanations."""

import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from triple_disentangle.core.evaluator import (
    ARCHIVE_MANIFEST,
    MetricReport,
    ProbeConfig,
    ProbeResult,
    RepresentationArchive,
    average_reports,
    compute_metrics,
    evaluate,
    explain_samples,
    export_attention_trace,
    export_projection,
    export_representations,
    predict_records,
    project_pca2d,
    run_probe,
    selection_score,
    write_explain_rows,
    write_probe_table,
)
from triple_disentangle.core.fusion import FUSION_LABELS, STAGE1_LABELS, read_attention_grid
from triple_disentangle.core.model import TripleDisentangleModel
from triple_disentangle.data.batching import collate
from triple_disentangle.data.features import MODALITIES, FeatureSequence, Modality, write_feature_file
from triple_disentangle.utils.exceptions import ArchiveLookupError, ConfigError, ValidationError


@pytest.fixture
def model(tiny_encoder, tiny_disentangler, feature_dims, seeded):
    return TripleDisentangleModel(tiny_encoder, tiny_disentangler, feature_dims)


def _write_archive(root, split, n, seed):
    """A hand-built archive whose u* encodes the modality and r* encodes the label."""
    rng = np.random.default_rng(seed)
    labels = rng.uniform(-3, 3, n)
    directory = root / split
    directory.mkdir(parents=True)
    for m in MODALITIES:
        u_star = rng.normal(0, 0.1, (n, 4))
        u_star[:, int(m)] += 5.0
        r_star = rng.normal(0, 0.1, (n, 4))
        r_star[:, 0] = labels
        write_feature_file(FeatureSequence.full(m, u_star), directory / f"u_star_{m.short}.tdrf")
        write_feature_file(FeatureSequence.full(m, r_star), directory / f"r_star_{m.short}.tdrf")
    meta = {
        "split": split,
        "task": "regression",
        "d_model": 4,
        "trained": True,
        "representations": ["r_star", "u_star"],
        "ids": [f"{split}{i}" for i in range(n)],
        "labels": labels.tolist(),
    }
    (directory / ARCHIVE_MANIFEST).write_text(json.dumps(meta), encoding="utf-8")
    return RepresentationArchive(root)


class TestComputeMetrics:
    """Tests for compute_metrics."""

    def test_perfect_regression(self):
        """Exact predictions give MAE 0, Corr 1 and 100 on every accuracy."""
        y = np.array([-2.6, -1.0, 0.0, 0.4, 1.6, 3.0])
        report = compute_metrics(y.copy(), y, "regression")
        assert report.MAE == 0.0
        assert report.Corr == 1.0
        for name in ("Acc2_nonneg", "Acc2_pos", "F1_nonneg", "F1_pos", "Acc7"):
            assert getattr(report, name) == 100.0
        assert report.AccC is None

    def test_two_binarizations(self):
        """Zero counts as non-negative; the positive split drops zero labels."""
        report = compute_metrics(np.array([0.5, -0.5]), np.array([0.0, 1.0]), "regression")
        assert report.Acc2_nonneg == 50.0
        assert report.Acc2_pos == 0.0
        assert report.MAE == pytest.approx(1.0)

    def test_all_zero_labels(self):
        """Without nonzero labels the positive-split scores are undefined."""
        report = compute_metrics(np.array([0.1, -0.1]), np.zeros(2), "regression")
        assert report.Acc2_pos is None
        assert report.Corr == 0.0

    def test_seven_buckets_are_clipped(self):
        report = compute_metrics(np.array([5.0, -0.4]), np.array([3.4, 0.2]), "regression")
        assert report.Acc7 == 100.0

    @pytest.mark.parametrize("scale,shift", [(2.0, 0.0), (0.5, 1.0), (3.0, -2.5)])
    def test_corr_affine_invariant_mae_not(self, scale, shift):
        """A positive affine map of the predictions keeps Corr and moves MAE."""
        rng = np.random.default_rng(0)
        y = rng.uniform(-3, 3, size=50)
        predictions = y + rng.normal(0, 0.5, size=50)
        base = compute_metrics(predictions, y, "regression")
        moved = compute_metrics(scale * predictions + shift, y, "regression")
        assert moved.Corr == pytest.approx(base.Corr, abs=1e-12)
        assert moved.MAE != pytest.approx(base.MAE, abs=1e-3)

    def test_classification(self):
        """Probability rows are reduced to their argmax class."""
        probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
        report = compute_metrics(probs, np.array([0, 1, 1, 1]), "classification")
        assert report.AccC == 75.0
        assert report.MAE is None
        assert 0 < report.F1_weighted < 100

    def test_empty(self):
        with pytest.raises(ValidationError, match="at least one sample"):
            compute_metrics(np.array([]), np.array([]), "regression")

    def test_length_mismatch(self):
        with pytest.raises(ValidationError, match="predictions for"):
            compute_metrics(np.zeros(3), np.zeros(2), "regression")


class TestReports:
    """Tests for report aggregation and persistence."""

    def test_average(self):
        reports = [MetricReport(MAE=1.0, Corr=0.5), MetricReport(MAE=0.5, Corr=0.7)]
        mean = average_reports(reports)
        assert mean.MAE == 0.75
        assert mean.Corr == pytest.approx(0.6)
        assert mean.AccC is None

    def test_average_needs_reports(self):
        with pytest.raises(ValidationError):
            average_reports([])

    def test_selection_score(self):
        assert selection_score(MetricReport(MAE=0.8), "regression") == -0.8
        assert selection_score(MetricReport(AccC=61.0), "classification") == 61.0

    def test_file_round_trip(self, tmp_path):
        report = MetricReport(MAE=0.25, Acc7=40.0)
        report.to_file(tmp_path / "metrics.json")
        assert MetricReport.from_file(tmp_path / "metrics.json") == report


class TestPrediction:
    """Tests for model evaluation helpers."""

    def test_evaluate_is_repeatable(self, model, make_records):
        """Evaluating twice gives the same report and restores training mode."""
        records = make_records(10)
        model.train()
        first = evaluate(model, records, batch_size=4)
        assert model.training
        assert evaluate(model, records, batch_size=4) == first

    def test_predictions_in_record_order(self, model, make_records):
        records = make_records(5)
        _, labels = predict_records(model, records, batch_size=2)
        np.testing.assert_allclose(labels, [r.label for r in records], rtol=1e-6)

    def test_attention_trace(self, model, make_records, tmp_path):
        trace = export_attention_trace(model, make_records(6), 4, tmp_path / "attention.txt")
        assert trace.count == 6
        labels, matrix, sums = read_attention_grid(tmp_path / "attention.txt")
        assert labels == FUSION_LABELS
        assert matrix.sum() == pytest.approx(6.0, abs=1e-4)
        assert sums.sum() == pytest.approx(6.0, abs=1e-4)

    def test_attention_trace_without_disentangler(
        self, tiny_encoder, tiny_disentangler, feature_dims, make_records
    ):
        model = TripleDisentangleModel(
            tiny_encoder, replace(tiny_disentangler, enabled=False), feature_dims
        )
        assert export_attention_trace(model, make_records(3)).labels == STAGE1_LABELS

    def test_attention_trace_stage1_forward(self, model, make_records):
        """Stage 1 traces the x̂ tokens even when the model has a disentangler."""
        trace = export_attention_trace(model, make_records(4), stage=1)
        assert trace.labels == STAGE1_LABELS


class TestRepresentationArchive:
    """Tests for exporting and reading representations."""

    def test_export(self, model, make_records, tmp_path):
        records = make_records(7)
        archive = export_representations(model, records, "test", tmp_path, batch_size=3)
        assert archive.splits() == ["test"]
        assert archive.ids("test") == [r.id for r in records]
        assert archive.representations("test") == ["r_star", "r_cap_u", "u_star", "x_hat"]
        assert archive.matrix("test", "u_star", Modality.AUDIO).shape == (7, 8)
        assert archive.trained("test")

    def test_export_matches_forward(self, model, make_records, tmp_path):
        """Archived rows equal the pooled vectors of a single forward pass."""
        records = make_records(4)
        archive = export_representations(model, records, "train", tmp_path, batch_size=2)
        with torch.no_grad():
            expected = model(collate(records)).representation("r_cap_u", Modality.VISUAL)
        np.testing.assert_allclose(
            archive.matrix("train", "r_cap_u", Modality.VISUAL), expected.numpy(), rtol=1e-5, atol=1e-5
        )

    def test_untrained_warns(self, model, make_records, tmp_path, capsys):
        archive = export_representations(model, make_records(2), "test", tmp_path, trained=False)
        assert "untrained" in capsys.readouterr().err
        assert not archive.trained("test")

    def test_lookup_errors(self, model, make_records, tmp_path):
        archive = export_representations(model, make_records(2), "test", tmp_path)
        with pytest.raises(ArchiveLookupError, match="'w_star'"):
            archive.matrix("test", "w_star", Modality.TEXT)
        with pytest.raises(LookupError, match="no split"):
            archive.ids("valid")


class TestProbes:
    """Tests for probes on frozen representations."""

    CFG = ProbeConfig(hidden=16, epochs=150, learning_rate=1e-2, batch_size=64)

    def test_modality_probe(self, tmp_path):
        """A representation that encodes the modality is probed near 100%."""
        _write_archive(tmp_path, "train", 80, 0)
        archive = _write_archive(tmp_path, "test", 40, 1)
        result = run_probe(archive, "u_star", "modality", self.CFG)
        assert result.report.AccC >= 95.0

    def test_sentiment_probe(self, tmp_path):
        """A representation carrying the label gives a high correlation."""
        _write_archive(tmp_path, "train", 80, 0)
        archive = _write_archive(tmp_path, "test", 40, 1)
        result = run_probe(archive, "r_star", "sentiment", self.CFG)
        assert result.report.Corr > 0.9
        assert result.report.AccC is None

    def test_probe_is_seeded_and_isolated(self, tmp_path):
        """Same config gives the same report; the global generator is untouched."""
        _write_archive(tmp_path, "train", 20, 0)
        archive = _write_archive(tmp_path, "test", 10, 1)
        cfg = ProbeConfig(epochs=2)
        torch.manual_seed(42)
        first = run_probe(archive, "u_star", "sentiment", cfg)
        after = torch.rand(1)
        torch.manual_seed(42)
        assert torch.equal(torch.rand(1), after)
        assert run_probe(archive, "u_star", "sentiment", cfg).report == first.report

    def test_unknown_probe_task(self, tmp_path):
        archive = _write_archive(tmp_path, "train", 5, 0)
        with pytest.raises(ValidationError, match="Unknown probe task"):
            run_probe(archive, "u_star", "humour")

    def test_missing_representation(self, tmp_path):
        _write_archive(tmp_path, "train", 5, 0)
        archive = _write_archive(tmp_path, "test", 5, 1)
        with pytest.raises(ArchiveLookupError):
            run_probe(archive, "r_cap_u", "modality")

    def test_probe_config(self):
        with pytest.raises(ConfigError, match="probe.hidden"):
            ProbeConfig(hidden=0).validate()

    def test_probe_table(self, tmp_path):
        results = [
            ProbeResult("u_star", "modality", MetricReport(AccC=100.0, F1_weighted=100.0)),
            ProbeResult("r_cap_u", "sentiment", MetricReport(MAE=0.5, Corr=0.3)),
        ]
        write_probe_table(results, tmp_path / "probe.csv", banner="UNTRAINED MODEL")
        lines = (tmp_path / "probe.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "# UNTRAINED MODEL"
        assert lines[1].startswith("representation,probe_task,MAE,Corr")
        assert lines[2].startswith("u*,modality,")
        assert "100.0000" in lines[2]
        assert lines[3].startswith("r∩u,sentiment,0.5000,0.3000")


class TestProjection:
    """Tests for the 2-D projection."""

    def test_pca_properties(self):
        """Coordinates are centered and ordered by explained variance."""
        rng = np.random.default_rng(0)
        data = rng.normal(size=(50, 5)) * np.array([5.0, 2.0, 1.0, 0.5, 0.1])
        coords = project_pca2d(data)
        assert coords.shape == (50, 2)
        np.testing.assert_allclose(coords.mean(axis=0), 0.0, atol=1e-10)
        assert coords[:, 0].var() >= coords[:, 1].var()

    def test_too_few_rows(self):
        with pytest.raises(ValidationError, match="at least 3"):
            project_pca2d(np.zeros((2, 4)))

    def test_one_dimensional(self):
        coords = project_pca2d(np.arange(4.0).reshape(4, 1))
        assert coords.shape == (4, 2)
        assert np.all(coords[:, 1] == 0)

    def test_export(self, tmp_path):
        archive = _write_archive(tmp_path, "test", 6, 0)
        projection = export_projection(archive, "test")
        assert len(projection.ids) == 36
        assert projection.groups[0] == "r_star/text"
        assert projection.groups[-1] == "u_star/visual"
        projection.to_text(tmp_path / "projection.txt")
        lines = (tmp_path / "projection.txt").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "id group x y"
        assert len(lines) == 37

    def test_unknown_method(self, tmp_path):
        archive = _write_archive(tmp_path, "test", 6, 0)
        with pytest.raises(ValidationError, match="tsne"):
            export_projection(archive, "test", method="tsne")


class TestExplain:
    """Tests for per-sample explanations."""

    def test_rows(self, model, make_records, tmp_path):
        """Each id gets one row per representation and modality."""
        records = make_records(5)
        rows = explain_samples(model, records, [records[3].id, records[0].id])
        assert len(rows) == 18
        assert rows[0]["id"] == records[3].id
        assert {r["representation"] for r in rows} == {"r*", "r∩u", "u*"}
        assert len({r["fused"] for r in rows if r["id"] == records[0].id}) == 1

        write_explain_rows(rows, tmp_path / "explain.csv")
        lines = (tmp_path / "explain.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "id,label,fused,representation,modality,prediction"
        assert len(lines) == 19

    def test_prediction_uses_head(self, model, make_records):
        """A row's prediction is FC_c applied to that representation."""
        records = make_records(2)
        rows = explain_samples(model, records, [records[1].id])
        with torch.no_grad():
            u_star = model(collate([records[1]])).representation("u_star", Modality.TEXT)
            expected = model.head(u_star).item()
        row = next(r for r in rows if r["representation"] == "u*" and r["modality"] == "text")
        assert row["prediction"] == pytest.approx(expected, rel=1e-5, abs=1e-6)

    def test_unknown_id(self, model, make_records):
        with pytest.raises(ValidationError, match="nope"):
            explain_samples(model, make_records(2), ["nope"])

    def test_needs_disentangler(self, tiny_encoder, tiny_disentangler, feature_dims, make_records):
        model = TripleDisentangleModel(
            tiny_encoder, replace(tiny_disentangler, enabled=False), feature_dims
        )
        with pytest.raises(ValidationError, match="disentangler"):
            explain_samples(model, make_records(2), [])

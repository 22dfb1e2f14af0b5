"""Tests for the tridis command line."""

import csv
import hashlib
import json
from dataclasses import replace

import pytest
from click.testing import CliRunner

from triple_disentangle import __version__
from triple_disentangle.cli import main
from triple_disentangle.core.evaluator import MetricReport
from triple_disentangle.core.fusion import FUSION_LABELS, STAGE1_LABELS, read_attention_grid


def _digest(directory):
    h = hashlib.sha256()
    for path in sorted(p for p in directory.rglob("*") if p.is_file()):
        h.update(path.relative_to(directory).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tiny_config, tmp_path):
    path = tmp_path / "config.json"
    tiny_config.to_file(path)
    return path


@pytest.fixture
def trained_run(runner, config_file, tmp_path):
    """A finished single-seed run in tmp_path/run."""
    out = tmp_path / "run"
    result = runner.invoke(main, ["train", "-c", str(config_file), "-o", str(out), "--seed", "0"])
    assert result.exit_code == 0, result.output
    return out


class TestPresets:
    """Tests for the presets command."""

    def test_list(self, runner):
        result = runner.invoke(main, ["presets"])
        assert result.exit_code == 0
        assert result.output.split() == ["meld", "mosei", "mosi", "synthetic", "ur_funny"]

    def test_show(self, runner):
        result = runner.invoke(main, ["presets", "mosi"])
        assert result.exit_code == 0
        assert json.loads(result.output)["schedule"]["learning_rate"] == 8e-5

    def test_unknown(self, runner):
        result = runner.invoke(main, ["presets", "iemocap"])
        assert result.exit_code == 1
        assert "Unknown preset" in result.output

    def test_version(self, runner):
        result = runner.invoke(main, ["--version"])
        assert __version__ in result.output


class TestSynth:
    """Tests for the synth command."""

    def test_byte_identical_runs(self, runner, config_file, tmp_path, tiny_spec):
        """The same seed twice produces identical dataset directories."""
        for name in ("a", "b"):
            result = runner.invoke(main, ["synth", "-c", str(config_file), "-o", str(tmp_path / name)])
            assert result.exit_code == 0, result.output
        assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
        lines = (tmp_path / "a" / "manifest.jsonl").read_text().splitlines()
        assert len(lines) == 1 + tiny_spec.num_samples
        assert f"manifest: {tmp_path / 'b' / 'manifest.jsonl'}" in result.output

    def test_seed_override(self, runner, config_file, tmp_path):
        runner.invoke(main, ["synth", "-c", str(config_file), "-o", str(tmp_path / "a")])
        runner.invoke(main, ["synth", "-c", str(config_file), "-o", str(tmp_path / "b"), "--seed", "11"])
        assert _digest(tmp_path / "a") != _digest(tmp_path / "b")

    def test_refuses_nonempty_directory(self, runner, config_file, tmp_path):
        out = tmp_path / "data"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        result = runner.invoke(main, ["synth", "-c", str(config_file), "-o", str(out)])
        assert result.exit_code == 1
        assert "not empty" in result.output
        assert not (out / "manifest.jsonl").exists()
        forced = runner.invoke(main, ["synth", "-c", str(config_file), "-o", str(out), "--force"])
        assert forced.exit_code == 0, forced.output

    def test_invalid_dims(self, runner, tiny_config, tmp_path):
        spec = replace(tiny_config.dataset.synthetic, feature_dims={"text": 2, "audio": 0, "visual": 2})
        config = replace(tiny_config, dataset=replace(tiny_config.dataset, synthetic=spec))
        config.to_file(tmp_path / "bad.json")
        result = runner.invoke(main, ["synth", "-c", str(tmp_path / "bad.json"), "-o", str(tmp_path / "out")])
        assert result.exit_code == 1
        assert "feature_dims.audio must be positive" in result.output
        assert not (tmp_path / "out").exists()

    def test_config_and_preset_are_exclusive(self, runner, config_file, tmp_path):
        both = runner.invoke(main, ["synth", "-c", str(config_file), "--preset", "synthetic"])
        neither = runner.invoke(main, ["synth", "-o", str(tmp_path / "x")])
        assert both.exit_code == 2
        assert neither.exit_code == 2
        assert "exactly one of --config or --preset" in neither.output


class TestTrain:
    """Tests for the train command."""

    def test_outputs(self, trained_run):
        """A run leaves the config, checkpoints, traces, summary and run log."""
        assert (trained_run / "config.json").exists()
        assert (trained_run / "stage1.pt").exists()
        assert (trained_run / "seed_0" / "checkpoint.pt").exists()
        assert not (trained_run / "seed_1").exists()
        assert (trained_run / "runs.db").exists()
        with open(trained_run / "summary.csv", encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        assert [r["seed"] for r in rows] == ["0", "mean"]

    def test_invalid_config_writes_nothing(self, runner, tiny_config, tmp_path):
        """A config error is reported before anything is written."""
        config = replace(tiny_config, schedule=replace(tiny_config.schedule, learning_rate=-1.0))
        config.to_file(tmp_path / "bad.json")
        out = tmp_path / "never"
        result = runner.invoke(main, ["train", "-c", str(tmp_path / "bad.json"), "-o", str(out)])
        assert result.exit_code == 1
        assert "learning_rate" in result.output
        assert not out.exists()

    def test_unknown_key(self, runner, config_file, tmp_path):
        data = json.loads(config_file.read_text())
        data["schedule"]["epochs"] = 3
        config_file.write_text(json.dumps(data))
        result = runner.invoke(main, ["train", "-c", str(config_file), "-o", str(tmp_path / "x")])
        assert result.exit_code == 1
        assert "Unknown config key 'schedule.epochs'" in result.output

    def test_no_log(self, runner, config_file, tmp_path):
        out = tmp_path / "quiet"
        result = runner.invoke(
            main, ["train", "-c", str(config_file), "-o", str(out), "--seed", "1", "--stage1-only", "-n"]
        )
        assert result.exit_code == 0, result.output
        assert (out / "stage1.pt").exists()
        assert not (out / "runs.db").exists()
        assert not (out / "summary.csv").exists()

    def test_rerun_resumes_and_force_restarts(self, runner, config_file, trained_run):
        """Per-epoch states survive a finished run; --force discards them."""
        assert (trained_run / "stage1_state.pt").exists()
        state = trained_run / "seed_0" / "state.pt"
        saved = state.read_bytes()
        args = ["train", "-c", str(config_file), "-o", str(trained_run), "--seed", "0"]
        assert runner.invoke(main, args).exit_code == 0
        assert state.read_bytes() == saved

        result = runner.invoke(main, args + ["--stage1-only", "--force"])
        assert result.exit_code == 0, result.output
        assert not state.exists()
        assert (trained_run / "stage1.pt").exists()


class TestEval:
    """Tests for the eval command."""

    def test_report_and_attention(self, runner, config_file, trained_run):
        checkpoint = trained_run / "seed_0" / "checkpoint.pt"
        args = ["eval", "-c", str(config_file), "-o", str(trained_run), "--checkpoint", str(checkpoint)]
        first = runner.invoke(main, args)
        assert first.exit_code == 0, first.output
        report = MetricReport.from_file(trained_run / "eval" / "metrics.json")
        assert report == MetricReport.from_file(trained_run / "seed_0" / "metrics.json")
        labels, _, sums = read_attention_grid(trained_run / "eval" / "attention.txt")
        assert labels == FUSION_LABELS
        assert sums.sum() == pytest.approx(6.0, abs=1e-4)

        saved = (trained_run / "eval" / "metrics.json").read_bytes()
        assert runner.invoke(main, args).exit_code == 0
        assert (trained_run / "eval" / "metrics.json").read_bytes() == saved

    def test_stage1_checkpoint(self, runner, config_file, trained_run):
        """The attention grid of a stage-1 checkpoint covers the three x̂ tokens."""
        args = [
            "eval", "-c", str(config_file), "-o", str(trained_run),
            "--checkpoint", str(trained_run / "stage1.pt"),
        ]
        result = runner.invoke(main, args)
        assert result.exit_code == 0, result.output
        labels, matrix, sums = read_attention_grid(trained_run / "eval" / "attention.txt")
        assert labels == STAGE1_LABELS
        assert matrix.shape == (3, 3)
        assert sums.sum() == pytest.approx(3.0, abs=1e-4)

    def test_fingerprint_mismatch(self, runner, tiny_config, trained_run, tmp_path):
        """A checkpoint from another model config is refused unless overridden."""
        other = replace(tiny_config, encoder=replace(tiny_config.encoder, dropout=0.2))
        other.to_file(tmp_path / "other.json")
        checkpoint = trained_run / "seed_0" / "checkpoint.pt"
        args = ["eval", "-c", str(tmp_path / "other.json"), "-o", str(trained_run), "--checkpoint", str(checkpoint)]
        refused = runner.invoke(main, args)
        assert refused.exit_code == 1
        assert "does not match" in refused.output
        assert runner.invoke(main, args + ["--allow-mismatch"]).exit_code == 0


class TestProbeAndExplain:
    """Tests for the probe and explain commands."""

    def test_probe(self, runner, config_file, trained_run):
        checkpoint = trained_run / "seed_0" / "checkpoint.pt"
        result = runner.invoke(
            main, ["probe", "-c", str(config_file), "-o", str(trained_run), "--checkpoint", str(checkpoint)]
        )
        assert result.exit_code == 0, result.output
        lines = (trained_run / "probe" / "probe_table.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0].startswith("representation,probe_task")
        assert len(lines) == 1 + 8
        assert (trained_run / "probe" / "projection.txt").exists()
        assert (trained_run / "probe" / "archive" / "test" / "archive.json").exists()

    def test_untrained_checkpoint_banner(self, runner, config_file, trained_run):
        """Probing a stage-1 checkpoint still emits rows, under a warning banner."""
        result = runner.invoke(
            main,
            ["probe", "-c", str(config_file), "-o", str(trained_run), "--checkpoint", str(trained_run / "stage1.pt")],
        )
        assert result.exit_code == 0, result.output
        assert "UNTRAINED" in result.output
        lines = (trained_run / "probe" / "probe_table.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0].startswith("# UNTRAINED")
        assert len(lines) == 2 + 8

    def test_explain(self, runner, config_file, trained_run):
        checkpoint = trained_run / "seed_0" / "checkpoint.pt"
        result = runner.invoke(
            main,
            [
                "explain", "-c", str(config_file), "-o", str(trained_run),
                "--checkpoint", str(checkpoint), "--id", "syn000000", "--id", "syn000007",
            ],
        )
        assert result.exit_code == 0, result.output
        with open(trained_run / "explain" / "explain.csv", encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 18
        assert {r["id"] for r in rows} == {"syn000000", "syn000007"}

    def test_explain_unknown_id(self, runner, config_file, trained_run):
        checkpoint = trained_run / "seed_0" / "checkpoint.pt"
        result = runner.invoke(
            main,
            ["explain", "-c", str(config_file), "-o", str(trained_run), "--checkpoint", str(checkpoint), "--id", "zzz"],
        )
        assert result.exit_code == 1
        assert "zzz" in result.output


class TestSweep:
    """Tests for the sweep command."""

    def test_grid(self, runner, tiny_config, tmp_path):
        config = replace(tiny_config, schedule=replace(tiny_config.schedule, seeds=[0], stage2_epochs=1))
        config.to_file(tmp_path / "config.json")
        (tmp_path / "grid.json").write_text(json.dumps({"loss.weights.w_sim": [0.0, 0.5]}))
        out = tmp_path / "sweep_run"
        result = runner.invoke(
            main, ["sweep", "-c", str(tmp_path / "config.json"), "-o", str(out), "--grid", str(tmp_path / "grid.json"), "-n"]
        )
        assert result.exit_code == 0, result.output
        with open(out / "sweep" / "sweep_summary.csv", encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        assert [json.loads(r["overrides"]) for r in rows] == [
            {"loss.weights.w_sim": 0.0},
            {"loss.weights.w_sim": 0.5},
        ]
        assert (out / "sweep" / "1" / "summary.csv").exists()

"""Command-line interface for triple-disentangle."""

import functools
import json
import pathlib
from typing import Any, Callable, Optional, Tuple

import click
import torch

from . import __version__
from .config import ExperimentConfig, RunSettings, expand_grid, get_preset, load_grid, preset_names
from .core.evaluator import (
    PROBE_TASKS,
    explain_samples,
    evaluate,
    export_attention_trace,
    export_projection,
    export_representations,
    run_probe,
    write_explain_rows,
    write_probe_table,
)
from .core.model import REPRESENTATIONS, TripleDisentangleModel
from .core.trainer import (
    Checkpoint,
    ExperimentData,
    RunLog,
    build_model,
    load_experiment_data,
    run_sweep,
    run_training,
)
from .data.synthetic import generate_synthetic, write_synthetic_dataset
from .utils.exceptions import DisentangleError
from .utils.logging import info, setup_logging, warn
from .utils.validation import validate_path


def config_options(f: Callable) -> Callable:
    """Click decorator for config selection."""
    f = click.option(
        "config_path",
        "-c",
        "--config",
        type=click.Path(exists=True, dir_okay=False),
        help="JSON experiment config",
    )(f)
    f = click.option(
        "--preset",
        type=click.Choice(preset_names()),
        help="Bundled preset to use instead of --config",
    )(f)
    return f


def output_options(f: Callable) -> Callable:
    """Click decorator for output and run-log options."""
    f = click.option(
        "out",
        "-o",
        "--out",
        type=click.Path(file_okay=False),
        help="Output directory (overrides TRIDIRA_OUT and the config)",
    )(f)
    f = click.option(
        "log_db_path",
        "-d",
        "--database",
        type=click.Path(dir_okay=False),
        help="Path to the run-log database",
    )(f)
    f = click.option("no_log", "-n", "--no-log", is_flag=True, help="Don't write the run log")(f)
    return f


def checkpoint_options(f: Callable) -> Callable:
    """Click decorator for checkpoint selection."""
    f = click.option(
        "checkpoint_path",
        "--checkpoint",
        type=click.Path(exists=True, dir_okay=False),
        required=True,
        help="Checkpoint written by 'train'",
    )(f)
    f = click.option(
        "allow_mismatch",
        "--allow-mismatch",
        is_flag=True,
        help="Use the checkpoint even if its fingerprint differs from the config",
    )(f)
    return f


def handle_errors(f: Callable) -> Callable:
    """Turn library errors into a clean nonzero exit."""

    @functools.wraps(f)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return f(*args, **kwargs)
        except DisentangleError as e:
            raise click.ClickException(str(e))

    return wrapper


def _load_config(
    config_path: Optional[str],
    preset: Optional[str],
    seed: Optional[int] = None,
    data_seed: Optional[int] = None,
) -> ExperimentConfig:
    if bool(config_path) == bool(preset):
        raise click.UsageError("Give exactly one of --config or --preset")
    config = ExperimentConfig.from_file(config_path) if config_path else get_preset(preset or "")
    if seed is not None:
        config.schedule.seeds = [seed]
    if data_seed is not None and config.dataset.synthetic is not None:
        config.dataset.synthetic.seed = data_seed
    config.validate()
    return config


def _settings(out: Optional[str], log_db_path: Optional[str] = None, no_log: bool = False) -> RunSettings:
    settings = RunSettings.from_env().merge_with_args(out=out, log_db_path=log_db_path, no_log=no_log)
    torch.set_num_threads(max(1, settings.threads))
    return settings


def _output_dir(settings: RunSettings, config: ExperimentConfig) -> pathlib.Path:
    return validate_path(settings.resolve_output_dir(config))


def _load_model(
    config: ExperimentConfig, data: ExperimentData, checkpoint_path: str, allow_mismatch: bool
) -> Tuple[TripleDisentangleModel, Checkpoint]:
    checkpoint = Checkpoint.load(checkpoint_path)
    checkpoint.check_fingerprint(config.fingerprint(data.feature_dims), allow_mismatch)
    model = build_model(config, data.feature_dims)
    checkpoint.restore(model)
    model.eval()
    return model, checkpoint


@click.group()
@click.version_option(__version__, prog_name="tridis")
def main() -> None:
    """Triple disentangled representation learning for multimodal affect."""


@main.command(name="presets")
@click.argument("name", required=False)
@handle_errors
def presets_command(name: Optional[str]) -> None:
    """List bundled presets, or print one as JSON."""
    if name is None:
        for preset in preset_names():
            click.echo(preset)
        return
    click.echo(json.dumps(get_preset(name).to_dict(), indent=2, sort_keys=True))


@main.command(name="synth")
@config_options
@click.option("--seed", type=int, help="Override the generator seed")
@click.option("out", "-o", "--out", type=click.Path(file_okay=False), help="Dataset directory")
@click.option("--force", is_flag=True, help="Write into a nonempty directory")
@handle_errors
def synth_command(
    config_path: Optional[str],
    preset: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    force: bool,
) -> None:
    """Materialize the configured synthetic dataset as TDRF files plus a manifest."""
    config = _load_config(config_path, preset, data_seed=seed)
    spec = config.dataset.synthetic
    if spec is None:
        raise click.ClickException("config has no synthetic dataset block")
    settings = _settings(out)
    out_dir = _output_dir(settings, config)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise click.ClickException(f"Output directory '{out_dir}' is not empty (use --force)")

    dataset = generate_synthetic(spec)
    manifest_path = write_synthetic_dataset(dataset, spec, out_dir)
    info(f"Wrote {len(dataset.records)} records")
    click.echo(f"manifest: {manifest_path}")
    click.echo(f"latents: {manifest_path.parent / 'latents'}")


@main.command(name="train")
@config_options
@output_options
@click.option("--seed", type=int, help="Train a single seed instead of the config's seed list")
@click.option("stage1_only", "--stage1-only", is_flag=True, help="Stop after stage 1")
@click.option("--force", is_flag=True, help="Discard stage1.pt and saved training states and train from scratch")
@handle_errors
def train_command(
    config_path: Optional[str],
    preset: Optional[str],
    out: Optional[str],
    log_db_path: Optional[str],
    no_log: bool,
    seed: Optional[int],
    stage1_only: bool,
    force: bool,
) -> None:
    """Run stage 1, then stage 2 for every seed, and summarize the test metrics."""
    config = _load_config(config_path, preset, seed)
    settings = _settings(out, log_db_path, no_log)
    out_dir = _output_dir(settings, config)
    data = load_experiment_data(config)
    data.require("train", "test")

    out_dir.mkdir(parents=True, exist_ok=True)
    if force:
        stale = [out_dir / "stage1.pt", out_dir / "stage1_state.pt", *out_dir.glob("seed_*/state.pt")]
        for path in stale:
            path.unlink(missing_ok=True)
    config.to_file(out_dir / "config.json")
    db = setup_logging(settings.resolve_log_path(out_dir))
    summary = run_training(config, data, out_dir, db, stage1_only)
    if summary is not None:
        click.echo(json.dumps(summary.mean.present(), indent=2, sort_keys=True))


@main.command(name="eval")
@config_options
@output_options
@checkpoint_options
@handle_errors
def eval_command(
    config_path: Optional[str],
    preset: Optional[str],
    out: Optional[str],
    log_db_path: Optional[str],
    no_log: bool,
    checkpoint_path: str,
    allow_mismatch: bool,
) -> None:
    """Compute the full metric set on the test split."""
    config = _load_config(config_path, preset)
    settings = _settings(out, log_db_path, no_log)
    out_dir = _output_dir(settings, config)
    data = load_experiment_data(config)
    data.require("test")
    model, checkpoint = _load_model(config, data, checkpoint_path, allow_mismatch)

    report = evaluate(model, data.test, config.schedule.batch_size, checkpoint.stage)
    eval_dir = out_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    report.to_file(eval_dir / "metrics.json")
    export_attention_trace(
        model, data.test, config.schedule.batch_size, eval_dir / "attention.txt", checkpoint.stage
    )

    db = setup_logging(settings.resolve_log_path(out_dir))
    log = RunLog.start(db, "eval", checkpoint.seed, checkpoint.fingerprint, out_dir)
    log.metrics("test", report)
    click.echo(json.dumps(report.present(), indent=2, sort_keys=True))


@main.command(name="probe")
@config_options
@output_options
@checkpoint_options
@handle_errors
def probe_command(
    config_path: Optional[str],
    preset: Optional[str],
    out: Optional[str],
    log_db_path: Optional[str],
    no_log: bool,
    checkpoint_path: str,
    allow_mismatch: bool,
) -> None:
    """Export frozen representations and train third-party probes on them."""
    config = _load_config(config_path, preset)
    settings = _settings(out, log_db_path, no_log)
    out_dir = _output_dir(settings, config)
    data = load_experiment_data(config)
    data.require("train", "test")
    model, checkpoint = _load_model(config, data, checkpoint_path, allow_mismatch)

    trained = checkpoint.trained and checkpoint.stage == 2
    banner = None
    if not trained:
        banner = "UNTRAINED CHECKPOINT: probe rows do not describe a trained model"
        warn(banner)
    probe_dir = out_dir / "probe"
    root = probe_dir / "archive"
    batch_size = config.schedule.batch_size
    export_representations(model, data.train, "train", root, batch_size, trained)
    archive = export_representations(model, data.test, "test", root, batch_size, trained)

    names = [name for name in REPRESENTATIONS if name in archive.representations("test")]
    results = [
        run_probe(archive, name, probe_task, config.probe)
        for probe_task in PROBE_TASKS
        for name in names
    ]
    write_probe_table(results, probe_dir / "probe_table.csv", banner)
    if "u_star" in names:
        export_projection(archive, "test").to_text(probe_dir / "projection.txt")
    for result in results:
        click.echo(f"{result.probe_task:9s} {result.representation:8s} " + json.dumps(result.report.present(), sort_keys=True))


@main.command(name="explain")
@config_options
@output_options
@checkpoint_options
@click.option("ids", "--id", multiple=True, required=True, help="Utterance id to explain")
@handle_errors
def explain_command(
    config_path: Optional[str],
    preset: Optional[str],
    out: Optional[str],
    log_db_path: Optional[str],
    no_log: bool,
    checkpoint_path: str,
    allow_mismatch: bool,
    ids: Tuple[str, ...],
) -> None:
    """Per-representation predictions for selected utterances."""
    config = _load_config(config_path, preset)
    settings = _settings(out, log_db_path, no_log)
    out_dir = _output_dir(settings, config)
    data = load_experiment_data(config)
    model, _ = _load_model(config, data, checkpoint_path, allow_mismatch)

    records = [r for split in data.splits.values() for r in split]
    rows = explain_samples(model, records, list(ids))
    explain_dir = out_dir / "explain"
    explain_dir.mkdir(parents=True, exist_ok=True)
    write_explain_rows(rows, explain_dir / "explain.csv")
    click.echo(f"Wrote {len(rows)} rows to {explain_dir / 'explain.csv'}")


@main.command(name="sweep")
@config_options
@output_options
@click.option(
    "grid_path",
    "--grid",
    type=click.Path(exists=True, dir_okay=False),
    required=True,
    help="JSON file mapping dotted config keys to value lists",
)
@handle_errors
def sweep_command(
    config_path: Optional[str],
    preset: Optional[str],
    out: Optional[str],
    log_db_path: Optional[str],
    no_log: bool,
    grid_path: str,
) -> None:
    """Train every point of a loss-weight grid."""
    config = _load_config(config_path, preset)
    settings = _settings(out, log_db_path, no_log)
    out_dir = _output_dir(settings, config)
    points = expand_grid(config, load_grid(grid_path))
    out_dir.mkdir(parents=True, exist_ok=True)
    db = setup_logging(settings.resolve_log_path(out_dir))
    results = run_sweep(points, out_dir, db)
    click.echo(f"{len(results)} grid points; summary in {out_dir / 'sweep' / 'sweep_summary.csv'}")

"""Run-log utilities for triple-disentangle."""

import datetime
import os
import pathlib
from typing import Any, Dict, Optional, Set

import click
import sqlite_utils


def get_logs_db_path(output_dir: pathlib.Path) -> pathlib.Path:
    """Get the run-log database path for an output directory."""
    override = os.environ.get("TRIDIRA_LOG_DB")
    if override:
        return pathlib.Path(override)
    return output_dir / "runs.db"


def logs_enabled() -> bool:
    """Check if run logging is enabled."""
    return os.environ.get("TRIDIRA_LOGS_OFF") != "1"


def setup_logging(db_path: Optional[pathlib.Path] = None) -> Optional[sqlite_utils.Database]:
    """Set up the run-log database.

    Args:
        db_path: Database path; None disables logging

    Returns:
        Database instance or None if logging is off or setup failed
    """
    if not logs_enabled() or db_path is None:
        return None

    try:
        db_path.parent.mkdir(parents=True, exist_ok=True)
        db = sqlite_utils.Database(str(db_path))
        migrate_db(db)
        return db
    except Exception as e:
        warn(f"run log disabled ({e})")
        return None


def migrate_db(db: sqlite_utils.Database) -> None:
    """Create the run-log tables if missing."""
    db.executescript("""
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY,
            command TEXT,
            seed INTEGER,
            fingerprint TEXT,
            output_dir TEXT,
            datetime_utc TEXT
        );
        CREATE TABLE IF NOT EXISTS loss_trace (
            id INTEGER PRIMARY KEY,
            run_id INTEGER REFERENCES runs(id),
            stage INTEGER,
            epoch INTEGER,
            task REAL,
            modality REAL,
            ucorr REAL,
            sim REAL,
            h_inter REAL,
            h_intra REAL,
            recon REAL,
            total REAL
        );
        CREATE TABLE IF NOT EXISTS metrics (
            id INTEGER PRIMARY KEY,
            run_id INTEGER REFERENCES runs(id),
            split TEXT,
            name TEXT,
            value REAL
        );
    """)


def start_run(
    db: Optional[sqlite_utils.Database],
    command: str,
    seed: Optional[int],
    fingerprint: str,
    output_dir: pathlib.Path,
) -> Optional[int]:
    """Insert a run row and return its id."""
    if db is None:
        return None
    table = db["runs"].insert({
        "command": command,
        "seed": seed,
        "fingerprint": fingerprint,
        "output_dir": str(output_dir),
        "datetime_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    })
    return int(table.last_pk)


def log_loss_row(
    db: Optional[sqlite_utils.Database], run_id: Optional[int], stage: int, row: Dict[str, Any]
) -> None:
    """Record one epoch of the loss trace."""
    if db is None:
        return
    db["loss_trace"].insert({"run_id": run_id, "stage": stage, **row})


def log_metrics(
    db: Optional[sqlite_utils.Database],
    run_id: Optional[int],
    split: str,
    metrics: Dict[str, Optional[float]],
) -> None:
    """Record a metric report, one row per metric."""
    if db is None:
        return
    db["metrics"].insert_all(
        {"run_id": run_id, "split": split, "name": name, "value": value}
        for name, value in metrics.items()
        if value is not None
    )


def info(message: str) -> None:
    """Print a progress message to stderr."""
    click.echo(message, err=True)


def warn(message: str) -> None:
    """Print a warning to stderr."""
    click.echo(f"Warning: {message}", err=True)


_WARNED: Set[str] = set()


def warn_once(message: str, key: Optional[str] = None) -> None:
    """Print a warning to stderr the first time its key (the message by default) is seen in this process."""
    key = message if key is None else key
    if key not in _WARNED:
        _WARNED.add(key)
        warn(message)

# app/repository/run_repository.py
import json
import sqlite3
from contextlib import contextmanager
from datetime import datetime
from typing import Iterator, Optional

import pandas as pd

from app.core.models import EpochRecord, Metrics


class RunRepository:
    """
    Handles the sqlite registry of training runs and their per-epoch logs.
    """

    def __init__(self, db_path: str):
        """
        Initializes the repository with the path to the SQLite database.

        Args:
            db_path (str): The path to the database file.
        """
        self.db_path = db_path

    @contextmanager
    def _get_connection(self) -> Iterator[sqlite3.Connection]:
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
        finally:
            conn.close()

    def create_tables(self):
        """Creates the 'runs' and 'epochs' tables if they don't already exist."""
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    started_at TEXT NOT NULL,
                    dataset TEXT NOT NULL,
                    architecture TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    config_json TEXT NOT NULL,
                    checkpoint_path TEXT,
                    accuracy REAL,
                    f1 REAL,
                    precision REAL
                )
            """)
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS epochs (
                    run_id INTEGER NOT NULL REFERENCES runs(id),
                    epoch INTEGER NOT NULL,
                    total REAL NOT NULL,
                    ce_final REAL NOT NULL,
                    ce_ts REAL NOT NULL,
                    ce_img REAL NOT NULL,
                    ce_exp REAL NOT NULL,
                    js_total REAL NOT NULL,
                    train_accuracy REAL NOT NULL,
                    val_accuracy REAL,
                    val_f1 REAL,
                    val_precision REAL,
                    PRIMARY KEY (run_id, epoch)
                )
            """)
            conn.commit()

    def start_run(self, dataset: str, architecture: str, seed: int, config: dict) -> int:
        """Registers a new run and returns its id."""
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                "INSERT INTO runs (started_at, dataset, architecture, seed, config_json) VALUES (?, ?, ?, ?, ?)",
                (datetime.now().isoformat(timespec="seconds"), dataset, architecture, seed,
                 json.dumps(config, sort_keys=True)),
            )
            conn.commit()
            return int(cursor.lastrowid)

    def add_epoch(self, run_id: int, record: EpochRecord):
        metrics = record.val_metrics
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                """
                INSERT OR REPLACE INTO epochs (
                    run_id, epoch, total, ce_final, ce_ts, ce_img, ce_exp, js_total,
                    train_accuracy, val_accuracy, val_f1, val_precision
                ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                """,
                (
                    run_id, record.epoch, record.loss.total, record.loss.ce_final, record.loss.ce_ts,
                    record.loss.ce_img, record.loss.ce_exp, record.loss.js_total, record.train_accuracy,
                    metrics.accuracy if metrics else None,
                    metrics.f1 if metrics else None,
                    metrics.precision if metrics else None,
                ),
            )
            conn.commit()

    def finish_run(self, run_id: int, checkpoint_path: str, metrics: Optional[Metrics]):
        """Stores the checkpoint location and final validation metrics of a run."""
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                "UPDATE runs SET checkpoint_path = ?, accuracy = ?, f1 = ?, precision = ? WHERE id = ?",
                (
                    checkpoint_path,
                    metrics.accuracy if metrics else None,
                    metrics.f1 if metrics else None,
                    metrics.precision if metrics else None,
                    run_id,
                ),
            )
            conn.commit()

    def get_runs(self) -> pd.DataFrame:
        """Retrieves all runs, newest first."""
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                "SELECT id, started_at, dataset, architecture, seed, checkpoint_path, accuracy, f1, precision "
                "FROM runs ORDER BY id DESC"
            )
            rows = [dict(row) for row in cursor.fetchall()]
        return pd.DataFrame(rows, columns=["id", "started_at", "dataset", "architecture", "seed",
                                           "checkpoint_path", "accuracy", "f1", "precision"])

    def get_config(self, run_id: int) -> Optional[dict]:
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("SELECT config_json FROM runs WHERE id = ?", (run_id,))
            row = cursor.fetchone()
            return json.loads(row["config_json"]) if row else None

    def get_epochs(self, run_id: int) -> pd.DataFrame:
        """Retrieves the epoch log of one run in epoch order."""
        with self._get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("SELECT * FROM epochs WHERE run_id = ? ORDER BY epoch ASC", (run_id,))
            rows = [dict(row) for row in cursor.fetchall()]
        frame = pd.DataFrame(rows)
        return frame.drop(columns=["run_id"]) if not frame.empty else frame

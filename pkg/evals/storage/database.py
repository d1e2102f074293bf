"""SQLite storage layer for benchmark results."""

import json
import sqlite3
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence


class EvalStorage:
    """Stores one row per benchmark experiment (study, arm, seed) in SQLite."""

    def __init__(self, db_path: Optional[Path] = None):
        """Initialize storage with database path.

        Args:
            db_path: Path to SQLite database file. Defaults to evals/storage/results.db
        """
        if db_path is None:
            db_path = Path(__file__).parent / "results.db"
        self.db_path = Path(db_path)
        self._ensure_schema()

    def _ensure_schema(self):
        """Create database schema if it doesn't exist."""
        schema_path = Path(__file__).parent / "schema.sql"
        with self._get_connection() as conn:
            conn.executescript(schema_path.read_text())
            conn.commit()

    @contextmanager
    def _get_connection(self):
        """Get database connection as context manager."""
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        try:
            yield conn
        finally:
            conn.close()

    def record_result(
        self,
        study: str,
        arm: str,
        seed: int,
        avg_incremental_accuracy: float,
        per_task_accs: Sequence[float],
        metrics: Optional[Dict[str, float]] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> int:
        """Record one experiment.

        Args:
            study: Benchmark study (e.g., 'forgetting', 'budget')
            arm: Arm within the study (e.g., 'exacfs', 'budget_20')
            seed: Master seed of the run
            avg_incremental_accuracy: Mean overall accuracy over all tasks
            per_task_accs: Overall accuracy after each task
            metrics: Dict of metric name -> value pairs (e.g., final old-class accuracy)
            metadata: Additional metadata to store as JSON

        Returns:
            Run ID of the inserted record
        """
        metadata_json = json.dumps(metadata) if metadata else None

        with self._get_connection() as conn:
            cursor = conn.execute(
                """
                INSERT INTO eval_runs
                    (study, arm, seed, avg_incremental_accuracy, per_task_json, metadata_json)
                VALUES (?, ?, ?, ?, ?, ?)
                """,
                (
                    study,
                    arm,
                    seed,
                    avg_incremental_accuracy,
                    json.dumps(list(per_task_accs)),
                    metadata_json,
                ),
            )
            run_id = cursor.lastrowid

            if metrics:
                for metric_name, value in metrics.items():
                    conn.execute(
                        "INSERT INTO eval_metrics (run_id, metric_name, value) VALUES (?, ?, ?)",
                        (run_id, metric_name, value),
                    )

            conn.commit()
            return run_id

    def get_results(
        self,
        study: Optional[str] = None,
        arm: Optional[str] = None,
        seed: Optional[int] = None,
        limit: int = 10,
    ) -> List[Dict[str, Any]]:
        """Get recent results with optional filtering, newest first.

        Args:
            study: Filter by study
            arm: Filter by arm
            seed: Filter by seed
            limit: Maximum number of results to return

        Returns:
            List of result dictionaries with `per_task_accs` and `metadata` decoded
        """
        conditions = []
        params: List[Any] = []

        if study:
            conditions.append("study = ?")
            params.append(study)
        if arm:
            conditions.append("arm = ?")
            params.append(arm)
        if seed is not None:
            conditions.append("seed = ?")
            params.append(seed)

        where_clause = f"WHERE {' AND '.join(conditions)}" if conditions else ""

        with self._get_connection() as conn:
            cursor = conn.execute(
                f"""
                SELECT id, study, arm, seed, timestamp, avg_incremental_accuracy,
                       per_task_json, metadata_json
                FROM eval_runs
                {where_clause}
                ORDER BY id DESC
                LIMIT ?
                """,
                params + [limit],
            )

            results = []
            for row in cursor.fetchall():
                result = dict(row)
                result["per_task_accs"] = json.loads(result.pop("per_task_json"))
                metadata_json = result.pop("metadata_json")
                if metadata_json:
                    result["metadata"] = json.loads(metadata_json)
                results.append(result)

            return results

    def get_summary(self, study: Optional[str] = None, group_by: str = "arm") -> List[Dict[str, Any]]:
        """Get accuracy statistics grouped by arm or seed.

        Args:
            study: Filter by study
            group_by: Group by 'arm' or 'seed'

        Returns:
            List of summary dictionaries with avg_accuracy, min_accuracy, max_accuracy, count
        """
        if group_by not in ["arm", "seed"]:
            raise ValueError("group_by must be 'arm' or 'seed'")

        where_clause = "WHERE study = ?" if study else ""
        params = [study] if study else []

        with self._get_connection() as conn:
            cursor = conn.execute(
                f"""
                SELECT
                    {group_by},
                    AVG(avg_incremental_accuracy) as avg_accuracy,
                    MIN(avg_incremental_accuracy) as min_accuracy,
                    MAX(avg_incremental_accuracy) as max_accuracy,
                    COUNT(*) as count
                FROM eval_runs
                {where_clause}
                GROUP BY {group_by}
                ORDER BY avg_accuracy DESC
                """,
                params,
            )

            return [dict(row) for row in cursor.fetchall()]

    def compare_arms(
        self,
        study: str,
        seed: int,
        arms: Optional[List[str]] = None,
    ) -> Dict[str, Dict[str, Any]]:
        """Latest result of each arm of a study for one seed.

        Args:
            study: Study to compare
            seed: Seed to compare
            arms: Arms to compare (None = all arms)

        Returns:
            Dict mapping arm name to its latest result
        """
        conditions = ["study = ?", "seed = ?"]
        params: List[Any] = [study, seed]

        if arms:
            placeholders = ",".join("?" * len(arms))
            conditions.append(f"arm IN ({placeholders})")
            params.extend(arms)

        where_clause = " AND ".join(conditions)

        with self._get_connection() as conn:
            cursor = conn.execute(
                f"""
                SELECT arm, avg_incremental_accuracy, timestamp
                FROM eval_runs
                WHERE {where_clause}
                  AND id IN (
                      SELECT MAX(id)
                      FROM eval_runs
                      WHERE {where_clause}
                      GROUP BY arm
                  )
                ORDER BY avg_incremental_accuracy DESC
                """,
                params + params,  # WHERE clause appears twice
            )

            return {row["arm"]: dict(row) for row in cursor.fetchall()}

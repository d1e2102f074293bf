"""Aggregate metrics CSVs into comparison rows, grouped by run label."""

import csv
import io
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from rich.table import Table

from .errors import FormatError
from .metrics import SCHEMA_VERSION, ParsedMetrics, read_metrics_csv


@dataclass
class ReportRow:
    label: str
    runs: int
    average: str
    average_std: Optional[float]
    task_means: List[float]
    task_stds: Optional[List[float]]
    base_task_final: float


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def load_runs(paths: Sequence[str]) -> List[ParsedMetrics]:
    """Parse every input; all files must share one supported schema version."""
    runs = [read_metrics_csv(path) for path in paths]
    versions = sorted({run.schema for run in runs})
    if len(versions) > 1:
        listing = ", ".join(f"{run.filename} (schema {run.schema})" for run in runs)
        raise FormatError(runs[0].filename, f"mixed schema versions: {listing}")
    if versions and versions[0] != SCHEMA_VERSION:
        raise FormatError(runs[0].filename, f"unsupported schema version {versions[0]}")
    return runs


def aggregate(runs: Sequence[ParsedMetrics]) -> List[ReportRow]:
    """One row per label in first-seen order; mean and population std across its runs."""
    groups: Dict[str, List[ParsedMetrics]] = {}
    for run in runs:
        groups.setdefault(run.label, []).append(run)

    rows = []
    for label, members in groups.items():
        tasks = len(members[0].rows)
        for run in members[1:]:
            if len(run.rows) != tasks:
                raise FormatError(
                    run.filename, f"{len(run.rows)} tasks, other runs labeled '{label}' have {tasks}"
                )
        overall = np.array([[row.overall_acc for row in run.rows] for run in members])
        averages = np.array([run.average for run in members])
        base_final = float(np.mean([run.rows[-1].per_task_accs[0] for run in members]))
        single = len(members) == 1
        rows.append(
            ReportRow(
                label=label,
                runs=len(members),
                average=members[0].average_text if single else repr(float(np.mean(averages))),
                average_std=None if single else float(np.std(averages)),
                task_means=overall.mean(axis=0).tolist(),
                task_stds=None if single else overall.std(axis=0).tolist(),
                base_task_final=base_final,
            )
        )
    return rows


def render_table(rows: Sequence[ReportRow]) -> Table:
    tasks = max((len(row.task_means) for row in rows), default=0)
    table = Table(title="Average incremental accuracy")
    table.add_column("Label", style="cyan")
    table.add_column("Runs", justify="right")
    table.add_column("Avg incr. acc", justify="right", style="green")
    table.add_column("Base task (final)", justify="right")
    for t in range(tasks):
        table.add_column(f"T{t}", justify="right")
    for row in rows:
        average = float(row.average)
        cells = [row.label, str(row.runs)]
        cells.append(_fmt(average) if row.average_std is None else f"{_fmt(average)} ± {_fmt(row.average_std)}")
        cells.append(_fmt(row.base_task_final))
        for t in range(tasks):
            if t >= len(row.task_means):
                cells.append("")
            elif row.task_stds is None:
                cells.append(_fmt(row.task_means[t]))
            else:
                cells.append(f"{_fmt(row.task_means[t])} ± {_fmt(row.task_stds[t])}")
        table.add_row(*cells)
    return table


def render_csv(rows: Sequence[ReportRow]) -> str:
    tasks = max((len(row.task_means) for row in rows), default=0)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["label", "runs", "avg_incremental_accuracy", "avg_incremental_accuracy_std", "base_task_final_acc"]
        + [f"task_{t}" for t in range(tasks)]
    )
    for row in rows:
        std = "" if row.average_std is None else repr(row.average_std)
        writer.writerow(
            [row.label, row.runs, row.average, std, repr(row.base_task_final)]
            + [repr(value) for value in row.task_means]
        )
    return buffer.getvalue()

"""Per-task accuracy log and its CSV form.

The CSV opens with a `# exacfs-metrics schema=1 label=<label> seed=<seed>`
line, then the header `task,classes_seen,overall_acc,per_task_accs,wall_ms`,
one row per task and a closing `avg_incremental_accuracy,<value>` line. Floats
use their shortest round-trip representation.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

from .errors import ContractError, FormatError

SCHEMA_VERSION = 1
MAGIC_PREFIX = "# exacfs-metrics"
HEADER = ["task", "classes_seen", "overall_acc", "per_task_accs", "wall_ms"]
FINAL_KEY = "avg_incremental_accuracy"


@dataclass
class TaskRecord:
    task: int
    classes_seen: int
    overall_acc: float
    per_task_accs: List[float]
    wall_ms: int = 0
    old_acc: Optional[float] = None
    new_acc: Optional[float] = None


@dataclass
class MetricsLog:
    label: str
    seed: int
    rows: List[TaskRecord] = field(default_factory=list)

    def append(self, record: TaskRecord) -> None:
        self.rows.append(record)

    def average_incremental_accuracy(self) -> float:
        return average_incremental_accuracy(self)

    def to_csv(self, timings: bool = True) -> str:
        lines = [f"{MAGIC_PREFIX} schema={SCHEMA_VERSION} label={self.label} seed={self.seed}", ",".join(HEADER)]
        for row in self.rows:
            per_task = ";".join(repr(float(acc)) for acc in row.per_task_accs)
            wall = row.wall_ms if timings else 0
            lines.append(f"{row.task},{row.classes_seen},{float(row.overall_acc)!r},{per_task},{wall}")
        lines.append(f"{FINAL_KEY},{self.average_incremental_accuracy()!r}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: Union[str, Path], timings: bool = True) -> None:
        Path(path).write_text(self.to_csv(timings))


def average_incremental_accuracy(log: MetricsLog) -> float:
    """Mean overall accuracy over every evaluated task, base task included."""
    if not log.rows:
        raise ContractError("average incremental accuracy of an empty log")
    total = 0.0
    for row in log.rows:
        total += row.overall_acc
    return total / len(log.rows)


@dataclass
class ParsedMetrics:
    filename: str
    schema: int
    label: str
    seed: Optional[int]
    rows: List[TaskRecord]
    average: float
    average_text: str


def parse_metrics_csv(text: str, filename: str) -> ParsedMetrics:
    """Parse a metrics CSV, raising FormatError with the offending 1-based line."""
    lines = text.splitlines()
    if not lines:
        raise FormatError(filename, "empty file", 1)
    schema, label, seed = SCHEMA_VERSION, Path(filename).parent.name or Path(filename).stem, None
    position = 0
    if lines[0].startswith(MAGIC_PREFIX):
        for token in lines[0][len(MAGIC_PREFIX) :].split():
            key, _, value = token.partition("=")
            try:
                if key == "schema":
                    schema = int(value)
                elif key == "seed":
                    seed = int(value)
                elif key == "label":
                    label = value
            except ValueError as e:
                raise FormatError(filename, f"bad {key} value '{value}'", 1) from e
        position = 1
    if schema != SCHEMA_VERSION:
        return ParsedMetrics(filename, schema, label, seed, [], float("nan"), "")
    if position >= len(lines) or lines[position].split(",") != HEADER:
        raise FormatError(filename, f"expected header {','.join(HEADER)}", position + 1)

    rows: List[TaskRecord] = []
    average_text = None
    for line_no, line in enumerate(lines[position + 1 :], start=position + 2):
        if not line.strip():
            continue
        fields = line.split(",")
        if fields[0] == FINAL_KEY:
            if len(fields) != 2 or average_text is not None:
                raise FormatError(filename, "malformed final line", line_no)
            average_text = fields[1]
            continue
        if average_text is not None:
            raise FormatError(filename, "rows after the final line", line_no)
        if len(fields) != len(HEADER):
            raise FormatError(filename, f"expected {len(HEADER)} fields, got {len(fields)}", line_no)
        try:
            per_task = [float(v) for v in fields[3].split(";")] if fields[3] else []
            record = TaskRecord(int(fields[0]), int(fields[1]), float(fields[2]), per_task, int(fields[4]))
        except ValueError as e:
            raise FormatError(filename, f"not numeric: {e}", line_no) from e
        if not 0.0 <= record.overall_acc <= 1.0:
            raise FormatError(filename, f"accuracy {record.overall_acc} outside [0, 1]", line_no)
        rows.append(record)
    if average_text is None:
        raise FormatError(filename, f"missing final {FINAL_KEY} line", len(lines))
    if not rows:
        raise FormatError(filename, "no task rows", len(lines))
    try:
        average = float(average_text)
    except ValueError as e:
        raise FormatError(filename, f"bad average '{average_text}'", len(lines)) from e
    return ParsedMetrics(filename, schema, label, seed, rows, average, average_text)


def read_metrics_csv(path: Union[str, Path]) -> ParsedMetrics:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise FormatError(str(path), f"cannot read: {e.strerror}") from e
    return parse_metrics_csv(text, str(path))

"""
Metrics and summary CSV files.

metrics.csv is streamed one row per logging interval and flushed after each row, so a
run that aborts keeps everything logged before the failure. Summary tables are built
with pandas. Floats are written with %.10g everywhere.
"""

import csv
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from engine.meta_engine import MetricsRow

logger = logging.getLogger("harness.metrics")

FLOAT_FORMAT = "%.10g"


class MetricsFormatError(ValueError):
    pass


def metrics_columns(mode: str, classification: bool, meta_batch: int) -> List[str]:
    """Column set for a mode: fixed per (mode, task kind, meta-batch size)"""
    columns = ["iteration", "mean_support_loss", "mean_query_loss", "post_adapt_eval_loss"]
    if classification:
        columns.append("accuracy")
    columns.append("init_idx")
    if mode == "weightgen":
        columns += [f"w_{i}" for i in range(meta_batch)]
    if mode == "uncertainty":
        columns += [f"s_{i}" for i in range(meta_batch)]
    columns.append("wall_ms")
    return columns


def format_float(value: float) -> str:
    if not math.isfinite(value):
        raise MetricsFormatError(f"Non-finite metric value {value}")
    return FLOAT_FORMAT % value


def row_to_record(row: MetricsRow, columns: Sequence[str]) -> Dict[str, str]:
    values: Dict[str, object] = {
        "iteration": row.iteration,
        "mean_support_loss": row.mean_support_loss,
        "mean_query_loss": row.mean_query_loss,
        "post_adapt_eval_loss": row.post_adapt_eval_loss,
        "accuracy": row.accuracy,
        "init_idx": row.init_idx,
        "wall_ms": row.wall_ms,
    }
    for i, w in enumerate(row.weights or ()):
        values[f"w_{i}"] = w
    for i, s in enumerate(row.s or ()):
        values[f"s_{i}"] = s
    record = {}
    for column in columns:
        value = values.get(column)
        if value is None:
            raise MetricsFormatError(f"Row for iteration {row.iteration} has no value for '{column}'")
        record[column] = str(value) if isinstance(value, int) else format_float(float(value))
    return record


class MetricsWriter:
    """Streams MetricsRows to CSV; usable as a context manager"""

    def __init__(self, path: Union[str, Path], columns: Sequence[str]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.columns = list(columns)
        self._file = open(self.path, 'w', newline='', encoding='utf-8')
        self._writer = csv.DictWriter(self._file, fieldnames=self.columns, lineterminator="\n")
        self._writer.writeheader()
        self._file.flush()
        self.rows_written = 0

    def write(self, row: MetricsRow):
        self._writer.writerow(row_to_record(row, self.columns))
        self._file.flush()
        self.rows_written += 1

    def close(self):
        if not self._file.closed:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(path)
    except pd.errors.EmptyDataError as e:
        raise MetricsFormatError(f"{path} has no header row") from e
    except pd.errors.ParserError as e:
        raise MetricsFormatError(f"Malformed CSV {path}: {e}") from e


def write_table(records: Sequence[Dict[str, object]], path: Union[str, Path],
                columns: Optional[Sequence[str]] = None) -> Path:
    """Write a summary table; an empty record list still produces the header"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(records), columns=list(columns) if columns else None)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path

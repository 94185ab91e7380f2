import math

import pytest

from engine.meta_engine import MetricsRow
from harness.metrics import (MetricsFormatError, MetricsWriter, format_float, metrics_columns, read_metrics,
                             row_to_record, write_table)


def make_row(iteration=0, **extra):
    return MetricsRow(iteration=iteration, mean_support_loss=0.5, mean_query_loss=0.75,
                      post_adapt_eval_loss=0.25, init_idx=0, wall_ms=12.5, **extra)


def test_column_sets_per_mode():
    assert metrics_columns("uniform", False, 4) == [
        "iteration", "mean_support_loss", "mean_query_loss", "post_adapt_eval_loss", "init_idx", "wall_ms"]
    assert metrics_columns("weightgen", True, 2) == [
        "iteration", "mean_support_loss", "mean_query_loss", "post_adapt_eval_loss", "accuracy", "init_idx",
        "w_0", "w_1", "wall_ms"]
    assert metrics_columns("uncertainty", False, 3)[-4:] == ["s_0", "s_1", "s_2", "wall_ms"]


def test_float_format():
    assert format_float(0.1) == "0.1"
    assert format_float(1 / 3) == "0.3333333333"
    with pytest.raises(MetricsFormatError):
        format_float(math.nan)


def test_record_requires_every_column():
    with pytest.raises(MetricsFormatError):
        row_to_record(make_row(), metrics_columns("uniform", True, 1))
    record = row_to_record(make_row(weights=(0.25, 0.75)), metrics_columns("weightgen", False, 2))
    assert record["w_1"] == "0.75"
    assert record["iteration"] == "0"


def test_writer_streams_rows(tmp_path):
    path = tmp_path / "metrics.csv"
    columns = metrics_columns("uniform", False, 1)
    with MetricsWriter(path, columns) as writer:
        assert path.read_text() == ",".join(columns) + "\n"
        writer.write(make_row(0))
        # each row is flushed as soon as it is written
        assert path.read_text().count("\n") == 2
        writer.write(make_row(100))
    assert writer.rows_written == 2
    frame = read_metrics(path)
    assert list(frame.columns) == columns
    assert frame["iteration"].tolist() == [0, 100]


def test_header_only_file_parses(tmp_path):
    path = tmp_path / "metrics.csv"
    MetricsWriter(path, metrics_columns("uniform", False, 1)).close()
    frame = read_metrics(path)
    assert len(frame) == 0


def test_empty_file_is_a_format_error(tmp_path):
    path = tmp_path / "metrics.csv"
    path.write_text("")
    with pytest.raises(MetricsFormatError):
        read_metrics(path)


def test_write_table(tmp_path):
    path = write_table([{"mode": "maml", "alpha": 0.01, "final_eval_loss": 1 / 3}], tmp_path / "summary.csv",
                       ["mode", "alpha", "final_eval_loss"])
    assert path.read_text() == "mode,alpha,final_eval_loss\nmaml,0.01,0.3333333333\n"
    empty = write_table([], tmp_path / "empty.csv", ["mode", "spread"])
    assert empty.read_text() == "mode,spread\n"

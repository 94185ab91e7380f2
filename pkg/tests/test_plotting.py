import matplotlib.pyplot as plt
import pandas as pd
import pytest

from harness.metrics import MetricsFormatError
from harness.plotting import build_figure, emit_plot


@pytest.fixture
def loss_csv(tmp_path):
    path = tmp_path / "metrics.csv"
    path.write_text("iteration,mean_support_loss,mean_query_loss,post_adapt_eval_loss,init_idx,wall_ms\n"
                    "0,1.5,2.0,1.8,0,10\n"
                    "100,0.9,1.1,1.0,3,11\n"
                    "199,0.4,0.6,0.5,9,12\n")
    return path


def test_loss_curve_has_two_labeled_series(loss_csv):
    frame = pd.read_csv(loss_csv)
    fig = build_figure(frame, "loss_curve")
    ax = fig.axes[0]
    assert len(ax.lines) == 2
    assert [line.get_label() for line in ax.lines] == ["meta-batch query loss", "held-out loss after adaptation"]
    plt.close(fig)


def test_empty_csv_gives_empty_axes(tmp_path):
    csv = tmp_path / "metrics.csv"
    csv.write_text("iteration,mean_support_loss,mean_query_loss,post_adapt_eval_loss,init_idx,wall_ms\n")
    out = emit_plot(csv, "loss_curve", tmp_path / "loss.svg")
    assert out.read_text().lstrip().startswith("<?xml")


def test_plot_is_byte_stable(loss_csv, tmp_path):
    first = emit_plot(loss_csv, "loss_curve", tmp_path / "a.svg").read_bytes()
    second = emit_plot(loss_csv, "loss_curve", tmp_path / "b.svg").read_bytes()
    assert first == second


def test_sweep_bars_group_by_mode(tmp_path):
    csv = tmp_path / "summary.csv"
    csv.write_text("mode,alpha,final_eval_loss,status\n"
                   "maml,0.001,1.2,ok\nmaml,0.01,0.8,ok\n"
                   "uncertainty,0.001,1.0,ok\nuncertainty,0.01,0.9,ok\n")
    fig = build_figure(pd.read_csv(csv), "sweep_bars")
    ax = fig.axes[0]
    assert len(ax.patches) == 4
    assert [text.get_text() for text in ax.get_legend().get_texts()] == ["maml", "uncertainty"]
    assert ax.get_xlabel() == "alpha"
    plt.close(fig)


def test_missing_columns_are_reported(tmp_path):
    with pytest.raises(MetricsFormatError):
        build_figure(pd.DataFrame({"step": [0, 1]}), "adaptation_curve")
    with pytest.raises(ValueError):
        build_figure(pd.DataFrame(), "histogram")

"""
SVG plots derived entirely from the CSV files a run writes.

Output is byte-stable: a fixed SVG hash salt and no date metadata, so plotting the same
CSV twice gives the same file.
"""

import logging
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from harness.metrics import MetricsFormatError, read_metrics  # noqa: E402

logger = logging.getLogger("harness.plotting")

PLOT_KINDS = ("loss_curve", "sweep_bars", "adaptation_curve")
SWEEP_KEYS = ("alpha", "n_query", "meta_batch")

plt.rcParams["svg.hashsalt"] = "metalab"


def _require(frame: pd.DataFrame, columns, kind: str):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise MetricsFormatError(f"{kind} needs columns {missing}")


def _loss_curve(ax, frame: pd.DataFrame):
    _require(frame, ["iteration", "mean_query_loss"], "loss_curve")
    for column, label in (("mean_query_loss", "meta-batch query loss"),
                          ("post_adapt_eval_loss", "held-out loss after adaptation")):
        if column in frame.columns:
            ax.plot(frame["iteration"], frame[column], label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_title("Loss curve")


def _sweep_bars(ax, frame: pd.DataFrame):
    _require(frame, ["mode"], "sweep_bars")
    keys = [k for k in SWEEP_KEYS if k in frame.columns]
    if not keys:
        raise MetricsFormatError(f"sweep_bars needs one of the columns {SWEEP_KEYS}")
    key = keys[0]
    value = "accuracy" if "accuracy" in frame.columns and frame["accuracy"].notna().any() else "final_eval_loss"
    _require(frame, [value], "sweep_bars")
    settings = sorted(frame[key].unique())
    modes = list(dict.fromkeys(frame["mode"]))
    width = 0.8 / max(len(modes), 1)
    positions = np.arange(len(settings))
    for i, mode in enumerate(modes):
        subset = frame[frame["mode"] == mode].set_index(key)[value]
        heights = [float(subset.get(s, np.nan)) for s in settings]
        ax.bar(positions + i * width, heights, width, label=str(mode))
    ax.set_xticks(positions + width * (len(modes) - 1) / 2)
    ax.set_xticklabels([f"{s:g}" for s in settings])
    ax.set_xlabel(key)
    ax.set_ylabel(value)
    ax.set_title(f"{value} by {key}")


def _adaptation_curve(ax, frame: pd.DataFrame):
    _require(frame, ["step", "mean_loss"], "adaptation_curve")
    ax.plot(frame["step"], frame["mean_loss"], marker="o", label="mean query loss")
    if "ci95" in frame.columns and len(frame):
        ax.fill_between(frame["step"], frame["mean_loss"] - frame["ci95"],
                        frame["mean_loss"] + frame["ci95"], alpha=0.2, label="95% interval")
    ax.set_xlabel("adaptation steps")
    ax.set_ylabel("loss")
    ax.set_title("Adaptation curve")


def build_figure(frame: pd.DataFrame, kind: str):
    if kind not in PLOT_KINDS:
        raise ValueError(f"Plot kind must be one of {PLOT_KINDS}, got '{kind}'")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if len(frame):
        {"loss_curve": _loss_curve, "sweep_bars": _sweep_bars,
         "adaptation_curve": _adaptation_curve}[kind](ax, frame)
        if ax.get_legend_handles_labels()[1]:
            ax.legend()
    else:
        logger.warning(f"No data rows, writing empty {kind} axes")
    return fig


def emit_plot(csv_path: Union[str, Path], kind: str, out: Union[str, Path]) -> Path:
    frame = read_metrics(csv_path)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig = build_figure(frame, kind)
    try:
        fig.savefig(out, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    logger.info(f"Wrote {kind} plot to {out}")
    return out

#!/usr/bin/env python3
"""
Subcommand implementations: train, the three robustness sweeps, gradcheck and plot.

Every command returns a process exit code: 0 success, 1 divergence or failed check,
2 configuration error, 3 I/O failure.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from engine.gradcheck import format_report, run_gradcheck
from engine.meta_engine import (AdaptationCurve, DivergenceError, MetaLearner, TrainResult,
                                evaluate_adaptation)
from engine.models import MlpSpec, classification_spec, regression_spec
from engine.params import ParamVector
from engine.tasks import (DatasetError, DatasetSource, SinusoidSource, SynthClsConfig, SynthClsSource,
                          TaskSource, load_dataset)
from harness.config import ConfigError, RunConfig, save_run_config
from harness.metrics import MetricsFormatError, MetricsWriter, metrics_columns, write_table
from harness.plotting import PLOT_KINDS, emit_plot

logger = logging.getLogger("harness")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3

TRAIN_SALT = 0
MONITOR_SALT = 1
EVAL_SALT = 2

SWEEP_MODES = ("maml", "uncertainty")


@dataclass
class TaskSetup:
    spec: MlpSpec
    loss_kind: str
    source: Callable[[int], TaskSource]


def build_task(cfg: RunConfig) -> TaskSetup:
    """Learner architecture and a task-source factory keyed by salt"""
    family = cfg.task_family
    if family == "sinusoid":
        spec = regression_spec(cfg.hidden, cfg.activation)
        return TaskSetup(spec, "mse", lambda salt: SinusoidSource(cfg.shot, cfg.query, cfg.seed, salt))
    if family == "synthcls":
        synth = SynthClsConfig(way=cfg.way, shot=cfg.shot, query_per_class=cfg.query, dim=cfg.dim,
                               noise_std=cfg.noise_std, prototype_range=cfg.prototype_range)
        spec = classification_spec(cfg.dim, cfg.way, cfg.hidden, cfg.activation)
        return TaskSetup(spec, "cross_entropy", lambda salt: SynthClsSource(synth, cfg.seed, salt))
    dataset = load_dataset(cfg.dataset_path)
    spec = classification_spec(dataset.manifest.dim, cfg.way, cfg.hidden, cfg.activation)
    return TaskSetup(spec, "cross_entropy",
                     lambda salt: DatasetSource(dataset, cfg.way, cfg.shot, cfg.query, cfg.seed, salt))


def ci95(values: Sequence[float]) -> float:
    """1.96 × standard error over evaluation tasks"""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / np.sqrt(values.size))


@dataclass
class TrainingRun:
    config: RunConfig
    setup: TaskSetup
    result: TrainResult
    curve: AdaptationCurve

    @property
    def final_eval_loss(self) -> float:
        return float(self.curve.mean_loss()[-1])

    @property
    def final_eval_ci95(self) -> float:
        return ci95(self.curve.losses[:, -1])

    @property
    def final_accuracy(self) -> Optional[float]:
        if self.curve.accuracies is None:
            return None
        return float(self.curve.accuracies[:, -1].mean())

    @property
    def final_accuracy_ci95(self) -> Optional[float]:
        if self.curve.accuracies is None:
            return None
        return ci95(self.curve.accuracies[:, -1])


def write_adaptation(curve: AdaptationCurve, path: Path) -> Path:
    mean = curve.mean_loss()
    spread = curve.ci95()
    records = []
    for step in range(curve.steps + 1):
        record = {"step": step, "mean_loss": mean[step], "ci95": spread[step]}
        if curve.accuracies is not None:
            record["accuracy"] = float(curve.accuracies[:, step].mean())
        records.append(record)
    columns = ["step", "mean_loss", "ci95"] + (["accuracy"] if curve.accuracies is not None else [])
    return write_table(records, path, columns)


def run_training(cfg: RunConfig) -> TrainingRun:
    """
    Meta-train one configuration into cfg.out: config.json, metrics.csv,
    checkpoint.pvec, pool/, uncertainty.pvec (uncertainty mode) and adaptation.csv.
    DivergenceError propagates after the rows logged so far are on disk.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_run_config(cfg, out / "config.json")

    setup = build_task(cfg)
    meta_cfg = cfg.to_meta_config(setup.loss_kind)
    learner = MetaLearner(setup.spec, meta_cfg)
    monitor = setup.source(MONITOR_SALT).sample_batch(cfg.monitor_tasks) if cfg.monitor_tasks else []
    columns = metrics_columns(meta_cfg.mode, setup.loss_kind == "cross_entropy", meta_cfg.meta_batch)

    with MetricsWriter(out / "metrics.csv", columns) as writer:
        result = learner.meta_train(setup.source(TRAIN_SALT), cfg.seed, monitor, on_row=writer.write)

    result.theta.save(out / "checkpoint.pvec")
    result.pool.save(out / "pool")
    if result.uncertainty is not None:
        ParamVector({"s": result.uncertainty.s}).save(out / "uncertainty.pvec")

    episodes = setup.source(EVAL_SALT).sample_batch(cfg.eval_tasks)
    curve = evaluate_adaptation(setup.spec, result.theta, episodes, cfg.inner_lr,
                                cfg.eval_inner_steps, setup.loss_kind)
    write_adaptation(curve, out / "adaptation.csv")
    logger.info(f"Run {out}: eval loss {curve.mean_loss()[0]:.4f} before adaptation, "
                f"{curve.mean_loss()[-1]:.4f} after {curve.steps} steps")
    return TrainingRun(cfg, setup, result, curve)


def _guarded(action: Callable[[], int]) -> int:
    """Map failures to exit codes, logging the diagnostic first"""
    try:
        return action()
    except DivergenceError as e:
        logger.error(f"Diverged: {e}")
        return EXIT_FAILED
    except (ConfigError, DatasetError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except MetricsFormatError as e:
        logger.error(f"Metrics error: {e}")
        return EXIT_FAILED
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO


def cmd_train(cfg: RunConfig) -> int:
    def action():
        run = run_training(cfg)
        print(f"✅ Training complete: final eval loss {run.final_eval_loss:.4f} -> {cfg.out}")
        return EXIT_OK
    return _guarded(action)


# Sweeps

@dataclass
class SweepCell:
    name: str
    config: RunConfig


@dataclass
class CellOutcome:
    cell: SweepCell
    run: Optional[TrainingRun]
    error: Optional[str] = None

    @property
    def status(self) -> str:
        return "ok" if self.run is not None else "diverged"


def _run_cell(cell: SweepCell) -> CellOutcome:
    try:
        return CellOutcome(cell, run_training(cell.config))
    except DivergenceError as e:
        logger.warning(f"Sweep cell {cell.name} diverged: {e}")
        return CellOutcome(cell, None, str(e))


def run_cells(cells: Sequence[SweepCell], parallelism: int) -> List[CellOutcome]:
    """Outcomes come back in cell order whatever the schedule"""
    if parallelism <= 1:
        return [_run_cell(cell) for cell in cells]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_cell, cells))


def _cell_config(cfg: RunConfig, name: str, **changes) -> RunConfig:
    return cfg.replace(out=str(Path(cfg.out) / name), **changes)


def sweep_lr(cfg: RunConfig) -> List[Dict[str, object]]:
    cells = [SweepCell(f"{mode}_alpha{alpha:g}", _cell_config(cfg, f"{mode}_alpha{alpha:g}",
                                                               mode=mode, inner_lr=alpha))
             for mode in SWEEP_MODES for alpha in cfg.alphas]
    outcomes = run_cells(cells, cfg.parallelism)
    records = []
    for outcome in outcomes:
        records.append({
            "mode": outcome.cell.config.mode,
            "alpha": outcome.cell.config.inner_lr,
            "final_eval_loss": outcome.run.final_eval_loss if outcome.run else float("nan"),
            "status": outcome.status,
        })
    return records


def spread_by_mode(records: Sequence[Dict[str, object]]) -> List[Dict[str, object]]:
    """max − min final eval loss per mode over the cells that finished"""
    rows = []
    for mode in SWEEP_MODES:
        losses = [r["final_eval_loss"] for r in records if r["mode"] == mode and r["status"] == "ok"]
        spread = float(max(losses) - min(losses)) if losses else float("nan")
        rows.append({"mode": mode, "spread": spread, "runs": len(losses)})
    return rows


def cmd_sweep_lr(cfg: RunConfig) -> int:
    def action():
        records = sweep_lr(cfg)
        out = Path(cfg.out)
        write_table(records, out / "summary.csv", ["mode", "alpha", "final_eval_loss", "status"])
        spreads = spread_by_mode(records)
        write_table(spreads, out / "spread.csv", ["mode", "spread", "runs"])
        for row in spreads:
            print(f"📊 {row['mode']}: spread {row['spread']:.4f} over {row['runs']} runs")
        return EXIT_OK if all(r["status"] == "ok" for r in records) else EXIT_FAILED
    return _guarded(action)


def evaluate_query_counts(run: TrainingRun, n_queries: Sequence[int]) -> List[Dict[str, object]]:
    """Accuracy of the trained model on held-out episodes with each query-set size"""
    cfg = run.config
    records = []
    for n_query in n_queries:
        setup = build_task(cfg.replace(query=n_query))
        episodes = setup.source(EVAL_SALT).sample_batch(cfg.eval_tasks)
        curve = evaluate_adaptation(setup.spec, run.result.theta, episodes, cfg.inner_lr,
                                    cfg.eval_inner_steps, setup.loss_kind)
        accuracies = curve.accuracies[:, -1]
        records.append({"mode": cfg.mode, "n_query": n_query,
                        "accuracy": float(accuracies.mean()), "ci95": ci95(accuracies)})
    return records


def cmd_sweep_query(cfg: RunConfig) -> int:
    def action():
        if not cfg.is_classification:
            raise ConfigError("sweep-query needs a classification task (synthcls or dataset:<path>)")
        cells = [SweepCell(mode, _cell_config(cfg, mode, mode=mode)) for mode in SWEEP_MODES]
        records = []
        failed = False
        for outcome in run_cells(cells, cfg.parallelism):
            if outcome.run is None:
                failed = True
                continue
            records += evaluate_query_counts(outcome.run, cfg.n_queries)
        write_table(records, Path(cfg.out) / "summary.csv", ["mode", "n_query", "accuracy", "ci95"])
        for mode in SWEEP_MODES:
            rows = [r for r in records if r["mode"] == mode]
            if len(rows) > 1:
                drop = rows[0]["accuracy"] - rows[-1]["accuracy"]
                print(f"📊 {mode}: accuracy drop {drop:+.4f} from n_query={rows[0]['n_query']} "
                      f"to {rows[-1]['n_query']}")
        return EXIT_FAILED if failed else EXIT_OK
    return _guarded(action)


def sweep_tasks(cfg: RunConfig) -> List[Dict[str, object]]:
    cells = [SweepCell(f"{mode}_n{n}", _cell_config(cfg, f"{mode}_n{n}", mode=mode, meta_batch=n))
             for n in cfg.meta_batches for mode in SWEEP_MODES]
    records = []
    for outcome in run_cells(cells, cfg.parallelism):
        run = outcome.run
        records.append({
            "mode": outcome.cell.config.mode,
            "meta_batch": outcome.cell.config.meta_batch,
            "final_eval_loss": run.final_eval_loss if run else float("nan"),
            "accuracy": run.final_accuracy if run and run.final_accuracy is not None else float("nan"),
            "ci95": (run.final_accuracy_ci95 if run.final_accuracy_ci95 is not None else run.final_eval_ci95)
            if run else float("nan"),
            "status": outcome.status,
        })
    return records


def cmd_sweep_tasks(cfg: RunConfig) -> int:
    def action():
        records = sweep_tasks(cfg)
        write_table(records, Path(cfg.out) / "summary.csv",
                    ["mode", "meta_batch", "final_eval_loss", "accuracy", "ci95", "status"])
        return EXIT_OK if all(r["status"] == "ok" for r in records) else EXIT_FAILED
    return _guarded(action)


def cmd_gradcheck(seed: int, out: Optional[Union[str, Path]] = None, force_first_order: bool = False) -> int:
    def action():
        results = run_gradcheck(seed, force_first_order=force_first_order)
        report = format_report(results)
        print(report)
        if out is not None:
            path = Path(out) / "gradcheck.txt"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(report + "\n", encoding="utf-8")
        if all(r.passed for r in results):
            print("✅ All gradient checks passed")
            return EXIT_OK
        print("❌ Gradient checks failed: " + ", ".join(r.name for r in results if not r.passed))
        return EXIT_FAILED
    return _guarded(action)


def cmd_plot(csv_path: Union[str, Path], kind: str, out: Union[str, Path]) -> int:
    def action():
        if kind not in PLOT_KINDS:
            raise ConfigError(f"Plot kind must be one of {PLOT_KINDS}, got '{kind}'")
        path = emit_plot(csv_path, kind, out)
        print(f"✅ Plot written: {path}")
        return EXIT_OK
    return _guarded(action)

"""Training loop, loss-vs-loss comparison and gamma curve tables."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..data import Dataset, Splits, generate
from ..errors import DomainError, TrainingAborted
from ..focal_core import GammaSchedule, Policy, ProgressTracker
from ..losses import (ClassificationBatch, LossOutput, RegressionBatch, TaskVariance, alpha_balanced_classification,
                      cross_entropy, focal_classification, focal_regression, multiloss_regression,
                      regression_loss, regression_p_correct, column_scale)
from ..metrics import RunTrace, classification_metrics, convergence_step, regression_progress_metric
from ..nn import Adam, Head, LrSchedule, Mlp
from .config import ExperimentConfig, dump_config
from .plots import line_chart

log = logging.getLogger(__name__)

CLASSIFICATION_METRICS = ("accuracy", "macro_f1", "minority_recall")
REGRESSION_METRICS = ("mse", "mse_clean", "p_correct")


@dataclass
class RunResult:
    config: ExperimentConfig
    trace: RunTrace
    model: Mlp
    variances: Dict[str, TaskVariance]
    summary: dict
    files: Dict[str, str] = field(default_factory=dict)


def _prepare_out(out: Optional[str]) -> Optional[str]:
    if out is None:
        return None
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write-test")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as exc:
        raise DomainError(f"output directory {out!r} is not writable: {exc}") from exc
    return out


def _head(cfg: ExperimentConfig, ds: Dataset) -> Head:
    if cfg.task == "classification":
        return Head("out", int(ds.n_classes), "softmax")
    if cfg.task == "multilabel":
        return Head("out", int(ds.n_classes), "sigmoid")
    return Head("out", ds.labels.shape[1], "identity")


class _Trainer:
    """State of one training run; one instance per worker."""

    def __init__(self, cfg: ExperimentConfig, splits: Splits):
        self.cfg = cfg
        self.splits = splits
        self.task = cfg.task
        train = splits.train
        if train.task != self.task:
            raise DomainError(f"dataset task {train.task!r} does not match the configured {self.task!r}")
        self.model = Mlp(train.features.shape[1], cfg.model.hidden, [_head(cfg, train)],
                         activations=[cfg.model.activation] * len(cfg.model.hidden), seed=cfg.seed)
        self.groups: Dict[str, List[int]] = {}
        self.variances: Dict[str, TaskVariance] = {}
        if self.task == "regression":
            self.groups = {name: [i] for i, name in enumerate(train.label_names)}
            s0 = math.log(cfg.loss.initial_sigma2)
            self.variances = {name: TaskVariance(s0) for name in self.groups}
        self.var_params = {f"var.{g}": np.array(v.s) for g, v in self.variances.items()}
        policy = Policy(cfg.loss.policy)
        self.tracker = ProgressTracker(cfg.loss.smoothing, policy)
        self.schedule: Optional[GammaSchedule] = cfg.loss.gamma_schedule() if cfg.loss.kind == "focal" else None
        self.optimizer = Adam(cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps)
        self.lr = LrSchedule(cfg.optim.lr_start, cfg.optim.lr_end, cfg.train.steps)
        self.rng = np.random.default_rng([cfg.seed, 2])
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0
        metrics = REGRESSION_METRICS if self.task == "regression" else CLASSIFICATION_METRICS
        if self.task == "regression" and train.clean_labels is None:
            metrics = tuple(m for m in metrics if m != "mse_clean")
        self.metric_names = metrics
        self.trace = RunTrace(list(self.groups), metrics)

    # ------------------------------------------------------------ helpers
    def _next_batch(self) -> np.ndarray:
        n = len(self.splits.train)
        bs = min(self.cfg.train.batch_size, n)
        if self._pos + bs > len(self._order):
            self._order = self.rng.permutation(n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + bs]
        self._pos += bs
        return idx

    def _sync_variances(self):
        for g in self.variances:
            self.variances[g].s = float(self.var_params[f"var.{g}"])

    def _loss(self, outputs: np.ndarray, labels: np.ndarray) -> LossOutput:
        loss = self.cfg.loss
        if self.task == "regression":
            batch = RegressionBatch(outputs, labels, self.groups)
            if loss.kind == "focal":
                return focal_regression(batch, self.variances, self.schedule, self.tracker, loss.base,
                                        loss.variance_normalization, update_tracker=False)
            if loss.kind == "multiloss":
                return multiloss_regression(batch, self.variances, loss.base)
            return regression_loss(batch, loss.base)
        batch = ClassificationBatch(outputs, labels)
        if loss.kind == "focal":
            return focal_classification(batch, self.schedule, self.tracker, update_tracker=False)
        if loss.kind == "alpha":
            return alpha_balanced_classification(batch)
        return cross_entropy(batch)

    def _observe(self, outputs: np.ndarray, labels: np.ndarray):
        """Fold the batch's correct-class probabilities into the progress tracker."""
        if self.task == "regression":
            batch = RegressionBatch(outputs, labels, self.groups)
            pc = regression_p_correct(batch.delta, column_scale(batch, self.variances,
                                                                self.cfg.loss.variance_normalization))
            self.tracker.observe(pc)
        else:
            batch = ClassificationBatch(outputs, labels)
            self.tracker.observe(batch.p_correct(), batch.labels if batch.multi_target else None)

    def evaluate(self, ds: Dataset) -> Dict[str, float]:
        if len(ds) == 0:
            return {}
        out = self.model.forward(ds.features)["out"]
        if self.task == "regression":
            res = {"mse": float(np.mean((out - ds.labels) ** 2))}
            if ds.clean_labels is not None:
                res["mse_clean"] = float(np.mean((out - ds.clean_labels) ** 2))
            pm = regression_progress_metric(RegressionBatch(out, ds.labels, self.groups), self.variances,
                                            self.cfg.loss.variance_normalization)
            res["p_correct"] = float(np.mean(list(pm.values())))
            return res
        report = classification_metrics(out, ds.labels, ds.n_classes)
        return report.as_dict()

    # ------------------------------------------------------------ loop
    def train(self) -> RunTrace:
        cfg = self.cfg
        train = self.splits.train
        t_start = time.perf_counter()
        self.trace.append(0, self.lr(0), sigma2={g: v.sigma2 for g, v in self.variances.items()},
                          val=self.evaluate(self.splits.val))
        last_good = {"step": 0}
        for step in range(1, cfg.train.steps + 1):
            t0 = time.perf_counter()
            idx = self._next_batch()
            x, y = train.features[idx], train.labels[idx]
            outputs = self.model.forward(x)["out"]
            lo = self._loss(outputs, y)
            weight = cfg.loss.reg_weight if self.task == "regression" else cfg.loss.cls_weight
            total = weight * lo.total
            if not math.isfinite(total):
                raise TrainingAborted(f"non-finite loss at step {step}; last good state {last_good}", last_good)
            grads = self.model.backward({"out": weight * lo.grad_wrt_outputs})
            params = self.model.params
            if cfg.loss.kind in ("focal", "multiloss") and self.variances:
                grads.update({f"var.{g}": np.array(weight * v) for g, v in lo.grad_wrt_variance.items()})
                params = {**params, **self.var_params}
            lr = self.lr(step - 1)
            try:
                self.optimizer.step(params, grads, lr)
            except FloatingPointError as exc:
                raise TrainingAborted(f"step {step}: {exc}; last good state {last_good}", last_good) from exc
            for name in self.var_params:
                if name in params:
                    self.var_params[name] = params[name]
            self.model.touch()
            self._sync_variances()
            self._observe(outputs, y)
            gamma = lo.diagnostics.get("gamma") if self.schedule is not None else None
            val = None
            if step % cfg.eval.every == 0 or step == cfg.train.steps:
                val = self.evaluate(self.splits.val)
            self.trace.append(
                step, lr, loss_total=total,
                loss_cls=lo.total if self.task != "regression" else None,
                loss_reg=lo.total if self.task == "regression" else None,
                gamma=gamma, p_hat=self.tracker.smoothed,
                sigma2={g: v.sigma2 for g, v in self.variances.items()},
                val=val, wall_clock=time.perf_counter() - t0)
            last_good = {"step": step, "loss_total": total, "gamma": gamma, "p_hat": self.tracker.smoothed}
        self.elapsed = time.perf_counter() - t_start
        return self.trace

    def summary(self) -> dict:
        cfg = self.cfg
        test = self.evaluate(self.splits.test)
        val = self.evaluate(self.splits.val)
        conv = None
        if cfg.eval.metric in self.metric_names:
            higher = cfg.eval.metric not in ("mse", "mse_clean")
            conv = convergence_step(self.trace, cfg.eval.metric, cfg.eval.threshold, cfg.eval.patience,
                                    higher_is_better=higher)
        gammas = self.trace.series("gamma")[1]
        return {
            "name": cfg.run_name,
            "loss": cfg.loss.label(),
            "seed": cfg.seed,
            "steps": cfg.train.steps,
            "test": test,
            "val": val,
            "convergence_metric": cfg.eval.metric,
            "convergence_threshold": cfg.eval.threshold,
            "convergence_step": conv,
            "final_gamma": float(gammas[-1]) if gammas.size else None,
            "final_p_hat": self.tracker.smoothed,
            "sigma2": {g: v.sigma2 for g, v in self.variances.items()},
            "wall_clock_seconds": getattr(self, "elapsed", 0.0),
        }


def run(cfg: ExperimentConfig, out: Optional[str] = None, splits: Optional[Splits] = None,
        plots: Optional[bool] = None) -> RunResult:
    """Train one configuration. Writes ``trace.csv``, ``summary.json``,
    ``model.ckpt``, ``config.txt`` (and SVG plots if enabled) under ``out``."""
    out = _prepare_out(out if out is not None else cfg.out)
    plots = cfg.plots if plots is None else plots
    if splits is None:
        splits = generate(cfg.dataset)
    trainer = _Trainer(cfg, splits)
    files: Dict[str, str] = {}
    try:
        trainer.train()
    except TrainingAborted:
        if out:
            trainer.trace.to_csv(os.path.join(out, "trace.csv"))
        raise
    summary = trainer.summary()
    if out:
        files["trace"] = os.path.join(out, "trace.csv")
        trainer.trace.to_csv(files["trace"])
        files["summary"] = os.path.join(out, "summary.json")
        with open(files["summary"], "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        files["model"] = os.path.join(out, "model.ckpt")
        trainer.model.save(files["model"], {f"s.{g}": v.s for g, v in trainer.variances.items()})
        files["config"] = os.path.join(out, "config.txt")
        with open(files["config"], "w", encoding="utf-8") as fh:
            fh.write(dump_config(cfg))
        if plots:
            files.update(plot_trace(trainer.trace, out))
    return RunResult(cfg, trainer.trace, trainer.model, trainer.variances, summary, files)


def plot_trace(trace: RunTrace, out: str) -> Dict[str, str]:
    files = {}
    for col, title in (("loss_total", "training loss"), ("gamma", "gamma"), ("p_hat", "smoothed p_correct")):
        steps, values = trace.series(col)
        if values.size == 0:
            continue
        path = os.path.join(out, f"{col}.svg")
        line_chart(path, [(col, steps, values)], title=title, xlabel="step", ylabel=col)
        files[f"plot_{col}"] = path
    return files


# ---------------------------------------------------------------- compare

def _run_worker(args):
    cfg, out = args
    res = run(cfg, out)
    return res.summary


def _unique_names(configs: Sequence[ExperimentConfig]) -> List[str]:
    names, seen = [], {}
    for cfg in configs:
        base = cfg.run_name
        seen[base] = seen.get(base, 0) + 1
        names.append(base if seen[base] == 1 else f"{base}-{seen[base]}")
    return names


def compare(configs: Sequence[ExperimentConfig], out: Optional[str] = None, jobs: int = 1) -> List[dict]:
    """Train every config on the same data, model, budget and seed; only the
    loss may differ. Writes ``comparison.csv`` and ``comparison.txt``."""
    if not configs:
        raise DomainError("nothing to compare")
    ref = configs[0].shared_setup()
    for cfg in configs[1:]:
        if cfg.shared_setup() != ref:
            raise DomainError(f"config {cfg.run_name!r} differs from {configs[0].run_name!r} "
                              "in more than its loss settings")
    out = _prepare_out(out)
    names = _unique_names(configs)
    dirs = [os.path.join(out, n) if out else None for n in names]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_run_worker, zip(configs, dirs)))
    else:
        splits = generate(configs[0].dataset)
        summaries = [run(cfg, d, splits=splits).summary for cfg, d in zip(configs, dirs)]
    rows = []
    for name, s in zip(names, summaries):
        row = {"name": name, "loss": s["loss"], "convergence_step": s["convergence_step"]}
        row.update({f"test.{k}": v for k, v in s["test"].items()})
        row.update({f"val.{k}": v for k, v in s["val"].items()})
        rows.append(row)
    if out:
        write_report(rows, out)
    return rows


def write_report(rows: List[dict], out: str):
    columns = list(dict.fromkeys(k for r in rows for k in r))
    with open(os.path.join(out, "comparison.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r.get(c) is None else (format(r[c], ".17g") if isinstance(r[c], float) else r[c])
                        for c in columns])
    widths = {c: max(len(c), *(len(_short(r.get(c))) for r in rows)) for c in columns}
    lines = ["  ".join(c.ljust(widths[c]) for c in columns)]
    for r in rows:
        lines.append("  ".join(_short(r.get(c)).ljust(widths[c]) for c in columns))
    with open(os.path.join(out, "comparison.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _short(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


# ---------------------------------------------------------------- gamma curves

def gamma_trace(schedules: Sequence[GammaSchedule], p_hat_grid: Sequence[float]) -> List[List[float]]:
    """Rows ``[p_hat, gamma_1, gamma_2, ...]``, one per grid point."""
    for p in p_hat_grid:
        if not 0.0 < p < 1.0:
            raise DomainError(f"grid values must lie in (0, 1), got {p!r}")
    return [[float(p)] + [s(p) for s in schedules] for p in p_hat_grid]


def write_gamma_trace(schedules: Sequence[GammaSchedule], p_hat_grid: Sequence[float], out: str,
                      plot: bool = False) -> Dict[str, str]:
    out = _prepare_out(out)
    rows = gamma_trace(schedules, p_hat_grid)
    files = {"csv": os.path.join(out, "gamma_trace.csv")}
    with open(files["csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p_hat"] + [f"gamma.{s}" for s in schedules])
        for r in rows:
            w.writerow([format(v, ".17g") for v in r])
    if plot:
        files["svg"] = os.path.join(out, "gamma_trace.svg")
        xs = [r[0] for r in rows]
        line_chart(files["svg"], [(str(s), xs, [r[i + 1] for r in rows]) for i, s in enumerate(schedules)],
                   title="gamma vs smoothed p_correct", xlabel="p_hat", ylabel="gamma")
    return files

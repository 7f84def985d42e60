"""Evaluation metrics, the run trace and its CSV form."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .errors import DomainError
from .losses import RegressionBatch, TaskVariance, column_scale, regression_p_correct

BASE_COLUMNS = ("step", "lr", "loss_total", "loss_cls", "loss_reg", "gamma", "p_hat")


def regression_progress_metric(batch: RegressionBatch, variances: Mapping[str, TaskVariance],
                               normalization: str = "squared") -> Dict[str, float]:
    """Mean regression correct-probability per target group.

    Independent of the task's value range: scaling residuals and the variance
    by the same factor leaves it unchanged.
    """
    if isinstance(variances, TaskVariance):
        variances = {name: variances for name in batch.target_groups}
    scale = column_scale(batch, variances, normalization)
    pc = regression_p_correct(batch.delta, scale)
    return {name: float(pc[:, cols].mean()) for name, cols in batch.target_groups.items()}


@dataclass
class ClassificationReport:
    accuracy: float
    recall: List[float]
    precision: List[float]
    f1: List[float]
    macro_f1: float
    minority_class: int
    minority_recall: float
    zero_predicted: List[int] = field(default_factory=list)

    def as_dict(self) -> Dict[str, float]:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1, "minority_recall": self.minority_recall}


def _binary_counts(pred: np.ndarray, true: np.ndarray):
    tp = float(np.sum(pred & true))
    return tp, float(np.sum(pred)), float(np.sum(true))


def classification_metrics(predictions, labels, n_classes: Optional[int] = None) -> ClassificationReport:
    """Accuracy, per-class recall/precision/F1, unweighted macro-F1 and the
    recall of the least frequent class.

    ``predictions`` may be class indices or an ``(n, classes)`` probability
    matrix (arg-maxed). If ``labels`` is a binary ``(n, classes)`` mask the task
    is multi-target: probabilities are thresholded at 0.5 and accuracy is
    element-wise. A class nobody predicted gets precision 0 and is listed in
    ``zero_predicted``.
    """
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.ndim == 2:
        if predictions.shape != labels.shape:
            raise DomainError("multi-target predictions and labels differ in shape")
        pred = predictions >= 0.5 if predictions.dtype.kind == "f" else predictions.astype(bool)
        true = labels.astype(bool)
        n_classes = labels.shape[1]
        columns = [(pred[:, c], true[:, c]) for c in range(n_classes)]
        accuracy = float(np.mean(pred == true))
        support = true.sum(axis=0)
    else:
        if predictions.ndim == 2:
            predictions = predictions.argmax(axis=1)
        if predictions.shape != labels.shape:
            raise DomainError("predictions and labels differ in shape")
        if n_classes is None:
            n_classes = int(max(labels.max(initial=0), predictions.max(initial=0))) + 1
        columns = [(predictions == c, labels == c) for c in range(n_classes)]
        accuracy = float(np.mean(predictions == labels)) if labels.size else math.nan
        support = np.bincount(labels.astype(np.int64), minlength=n_classes)
    recall, precision, f1, zero = [], [], [], []
    for c, (p, t) in enumerate(columns):
        tp, n_pred, n_true = _binary_counts(p, t)
        r = tp / n_true if n_true else 0.0
        if n_pred:
            pr = tp / n_pred
        else:
            pr = 0.0
            zero.append(c)
        recall.append(r)
        precision.append(pr)
        f1.append(2 * pr * r / (pr + r) if pr + r > 0 else 0.0)
    minority = int(np.argmin(support))
    return ClassificationReport(
        accuracy=accuracy,
        recall=recall,
        precision=precision,
        f1=f1,
        macro_f1=float(np.mean(f1)),
        minority_class=minority,
        minority_recall=recall[minority],
        zero_predicted=zero,
    )


# ---------------------------------------------------------------- trace

def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return ""
    return format(x, ".17g")


class RunTrace:
    """Per-step training record.

    Columns, in order: ``step, lr, loss_total, loss_cls, loss_reg, gamma,
    p_hat``, one ``sigma2.<group>`` per variance group, then one
    ``val.<metric>`` per validation metric. Cells without a value (e.g.
    validation columns between evaluations) are empty. Wall-clock timings are
    kept beside the table, never in it, so traces stay reproducible.
    """

    def __init__(self, sigma2_groups: Sequence[str] = (), val_metrics: Sequence[str] = ()):
        self.sigma2_groups = list(sigma2_groups)
        self.val_metrics = list(val_metrics)
        self.rows: List[Dict[str, Optional[float]]] = []
        self.wall_clock: List[float] = []

    @property
    def columns(self) -> List[str]:
        return (list(BASE_COLUMNS) + [f"sigma2.{g}" for g in self.sigma2_groups]
                + [f"val.{m}" for m in self.val_metrics])

    def append(self, step: int, lr: float, loss_total=None, loss_cls=None, loss_reg=None, gamma=None,
               p_hat=None, sigma2: Optional[Mapping[str, float]] = None,
               val: Optional[Mapping[str, float]] = None, wall_clock: float = 0.0):
        if self.rows and step <= self.rows[-1]["step"]:
            raise DomainError(f"trace steps must increase strictly (got {step} after {self.rows[-1]['step']})")
        for name, v in (("gamma", gamma), ("p_hat", p_hat)):
            if v is not None and not math.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v!r}")
        if p_hat is not None and not 0.0 <= p_hat <= 1.0:
            raise DomainError(f"p_hat must lie in [0, 1], got {p_hat!r}")
        row = {"step": int(step), "lr": lr, "loss_total": loss_total, "loss_cls": loss_cls,
               "loss_reg": loss_reg, "gamma": gamma, "p_hat": p_hat}
        sigma2 = sigma2 or {}
        val = val or {}
        unknown = set(val) - set(self.val_metrics)
        if unknown:
            raise DomainError(f"unknown validation metrics {sorted(unknown)}")
        for g in self.sigma2_groups:
            row[f"sigma2.{g}"] = sigma2.get(g)
        for m in self.val_metrics:
            row[f"val.{m}"] = val.get(m)
        self.rows.append(row)
        self.wall_clock.append(wall_clock)

    def __len__(self):
        return len(self.rows)

    def _column(self, name: str) -> str:
        cols = self.columns
        if name in cols:
            return name
        if f"val.{name}" in cols:
            return f"val.{name}"
        raise DomainError(f"unknown trace metric {name!r}")

    def series(self, name: str, skip_missing: bool = True):
        """``(steps, values)`` arrays for one column."""
        col = self._column(name)
        pairs = [(r["step"], r[col]) for r in self.rows if not (skip_missing and r[col] is None)]
        steps = np.array([p[0] for p in pairs], dtype=np.int64)
        values = np.array([np.nan if p[1] is None else p[1] for p in pairs], dtype=np.float64)
        return steps, values

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([str(row["step"])] + [_fmt(row[c]) for c in self.columns[1:]])

    @classmethod
    def from_csv(cls, path) -> "RunTrace":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise DomainError(f"{path}: empty trace")
        header = rows[0]
        if tuple(header[:len(BASE_COLUMNS)]) != BASE_COLUMNS:
            raise DomainError(f"{path}: not a trace file (unexpected header)")
        sig = [h[len("sigma2."):] for h in header if h.startswith("sigma2.")]
        val = [h[len("val."):] for h in header if h.startswith("val.")]
        trace = cls(sig, val)
        if trace.columns != header:
            raise DomainError(f"{path}: trace columns out of order")
        for lineno, cells in enumerate(rows[1:], start=2):
            if len(cells) != len(header):
                raise DomainError(f"{path}: row {lineno} has {len(cells)} cells, expected {len(header)}")
            try:
                values = {h: (float(c) if c != "" else None) for h, c in zip(header, cells)}
            except ValueError as exc:
                raise DomainError(f"{path}: row {lineno}: {exc}") from None
            trace.append(int(values["step"]), values["lr"], values["loss_total"], values["loss_cls"],
                         values["loss_reg"], values["gamma"], values["p_hat"],
                         {g: values[f"sigma2.{g}"] for g in sig if values[f"sigma2.{g}"] is not None},
                         {m: values[f"val.{m}"] for m in val if values[f"val.{m}"] is not None})
        return trace


def convergence_step(trace: RunTrace, target: str, threshold: float, patience: int = 1,
                     higher_is_better: bool = True) -> Optional[int]:
    """First evaluated step from which ``target`` stays at or beyond
    ``threshold`` for ``patience`` consecutive evaluations; ``None`` if never."""
    if patience < 1:
        raise DomainError("patience must be at least 1")
    steps, values = trace.series(target)
    ok = values >= threshold if higher_is_better else values <= threshold
    run = 0
    for i, good in enumerate(ok):
        run = run + 1 if good else 0
        if run == patience:
            return int(steps[i - patience + 1])
    return None

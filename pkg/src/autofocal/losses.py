"""Trainable losses: focused cross entropy, focal regression with learned task
variance, and the baselines they are compared against.

Every loss works on the *model outputs* (probabilities for classification,
raw predictions for regression) and returns the gradient with respect to
those outputs. Focal weights are constants of the step: the returned gradient
is always ``weight * gradient_of_unweighted_loss``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erfc, expit

from .errors import DegenerateBatchWarning, DomainError
from .focal_core import GammaSchedule, ProgressTracker, batch_progress, focal_weight

EPS = 1e-7
_SQRT2 = math.sqrt(2.0)
BASES = ("l1", "l2")
NORMALIZATIONS = ("squared", "std")


class ClassificationBatch:
    """Model probabilities plus labels.

    Single-target: ``probabilities`` is ``(n, classes)`` with rows summing to
    one and ``labels`` holds class indices. Multi-target: ``labels`` is a
    binary mask of the same shape as ``probabilities``.
    """

    def __init__(self, probabilities, labels):
        p = np.asarray(probabilities, dtype=np.float64)
        y = np.asarray(labels)
        if p.ndim != 2 or p.shape[0] == 0:
            raise DomainError(f"probabilities must be a non-empty (n, classes) array, got shape {p.shape}")
        if not np.all((p >= 0.0) & (p <= 1.0)):
            raise DomainError("probabilities must lie in [0, 1]")
        if y.shape == p.shape:
            if not np.all((y == 0) | (y == 1)):
                raise DomainError("multi-target label masks must be binary")
            self.multi_target = True
            y = y.astype(np.float64)
        elif y.shape == (p.shape[0],):
            if not np.issubdtype(y.dtype, np.integer):
                if not np.all(np.mod(y, 1) == 0):
                    raise DomainError("class labels must be integers")
                y = y.astype(np.int64)
            if np.any(y < 0) or np.any(y >= p.shape[1]):
                raise DomainError("class label out of range")
            if not np.allclose(p.sum(axis=1), 1.0, rtol=0.0, atol=1e-6):
                raise DomainError("single-target probability rows must sum to 1")
            self.multi_target = False
        else:
            raise DomainError(f"labels of shape {y.shape} do not match probabilities {p.shape}")
        self.probabilities = p
        self.labels = y

    @property
    def n(self) -> int:
        return self.probabilities.shape[0]

    def p_correct(self) -> np.ndarray:
        """``(n,)`` for single-target, ``(n, classes)`` for multi-target."""
        if self.multi_target:
            return np.where(self.labels == 1, self.probabilities, 1.0 - self.probabilities)
        return self.probabilities[np.arange(self.n), self.labels]


class RegressionBatch:
    """Predictions and labels of shape ``(n, targets)``.

    ``target_groups`` maps a group name to the target columns that share one
    task variance; by default all columns form the group ``"all"``.
    """

    def __init__(self, predictions, labels, target_groups: Optional[Mapping[str, Sequence[int]]] = None):
        pred = np.asarray(predictions, dtype=np.float64)
        lab = np.asarray(labels, dtype=np.float64)
        if pred.ndim == 1:
            pred = pred[:, None]
        if lab.ndim == 1:
            lab = lab[:, None]
        if pred.shape != lab.shape:
            raise DomainError(f"predictions {pred.shape} and labels {lab.shape} differ in shape")
        if pred.ndim != 2 or pred.shape[0] == 0:
            raise DomainError("regression batch must be a non-empty (n, targets) array")
        d = pred.shape[1]
        if target_groups is None:
            target_groups = {"all": list(range(d))}
        seen = []
        groups = {}
        for name, cols in target_groups.items():
            cols = [int(c) for c in cols]
            if not cols:
                raise DomainError(f"target group {name!r} is empty")
            seen.extend(cols)
            groups[str(name)] = cols
        if sorted(seen) != list(range(d)):
            raise DomainError("every target dimension must belong to exactly one group")
        self.predictions = pred
        self.labels = lab
        self.target_groups = groups

    @property
    def delta(self) -> np.ndarray:
        return self.predictions - self.labels


class TaskVariance:
    """Learnable positive variance ``sigma2 = exp(s)`` of one target group."""

    def __init__(self, s: float = 0.0):
        s = float(s)
        if not math.isfinite(s):
            raise DomainError("variance parameter must be finite")
        self.s = s

    @classmethod
    def from_sigma2(cls, sigma2: float) -> "TaskVariance":
        if not sigma2 > 0:
            raise DomainError("sigma2 must be positive")
        return cls(math.log(sigma2))

    @property
    def sigma2(self) -> float:
        return math.exp(self.s)

    @property
    def regularizer(self) -> float:
        return math.log1p(self.sigma2)

    def regularizer_grad(self) -> float:
        """d/ds log(exp(s) + 1)."""
        return float(expit(self.s))

    def __repr__(self):
        return f"TaskVariance(s={self.s!r}, sigma2={self.sigma2!r})"


@dataclass
class LossOutput:
    total: float
    per_sample_weight: np.ndarray
    grad_wrt_outputs: np.ndarray
    grad_wrt_variance: Dict[str, float] = field(default_factory=dict)
    diagnostics: Dict[str, float] = field(default_factory=dict)


# ---------------------------------------------------------------- classification

def _ce_terms(batch: ClassificationBatch):
    """Per-element CE, its gradient w.r.t. the probabilities (already divided by
    the reduction count), and the reduction count."""
    pc = batch.p_correct()
    pc_c = np.maximum(pc, EPS)
    loss = -np.log(pc_c)
    # clamped region is flat
    dloss_dpc = np.where(pc > EPS, -1.0 / pc_c, 0.0)
    if batch.multi_target:
        count = pc.size
        dpc_dp = np.where(batch.labels == 1, 1.0, -1.0)
        grad = dloss_dpc * dpc_dp / count
    else:
        count = batch.n
        grad = np.zeros_like(batch.probabilities)
        grad[np.arange(batch.n), batch.labels] = dloss_dpc / count
    return pc, loss, grad, count


def _expand(weight: np.ndarray, batch: ClassificationBatch) -> np.ndarray:
    return weight if batch.multi_target else weight[:, None]


def cross_entropy(batch: ClassificationBatch) -> LossOutput:
    """Plain (binary for multi-target) cross entropy, mean-reduced."""
    pc, loss, grad, count = _ce_terms(batch)
    weight = np.ones_like(pc)
    return LossOutput(
        total=float(loss.sum() / count),
        per_sample_weight=weight,
        grad_wrt_outputs=grad,
        diagnostics={"p_correct": float(pc.mean()), "gamma": 0.0},
    )


def focal_classification(batch: ClassificationBatch, schedule: GammaSchedule, tracker: ProgressTracker,
                         update_tracker: bool = True) -> LossOutput:
    """Cross entropy weighted per element by ``(1 - p_correct) ** gamma``.

    gamma comes from the tracker's estimate *before* this batch is folded in;
    on the very first batch the batch's own mean stands in.
    """
    pc, loss, grad, count = _ce_terms(batch)
    labels = batch.labels if batch.multi_target else None
    batch_mean = batch_progress(pc, labels, tracker.policy)
    if tracker.initialized:
        p_hat = tracker.smoothed
    else:
        p_hat = batch_mean if batch_mean is not None else float(pc.mean())
    gamma = schedule(p_hat)
    weight = focal_weight(pc, gamma)
    total = float((weight * loss).sum() / count)
    grad = _expand(weight, batch) * grad
    if update_tracker:
        tracker.observe(pc, labels)
    return LossOutput(
        total=total,
        per_sample_weight=weight,
        grad_wrt_outputs=grad,
        diagnostics={
            "p_correct": float(batch_mean) if batch_mean is not None else math.nan,
            "gamma": gamma,
            "p_hat": float(p_hat),
        },
    )


def alpha_balanced_classification(batch: ClassificationBatch) -> LossOutput:
    """CE scaled per sample by ``1 - frequency`` of its class within the batch."""
    if batch.multi_target:
        raise DomainError("alpha balancing is defined for single-target batches")
    pc, loss, grad, count = _ce_terms(batch)
    freq = np.bincount(batch.labels, minlength=batch.probabilities.shape[1]) / batch.n
    alpha = 1.0 - freq[batch.labels]
    if np.unique(batch.labels).size == 1:
        warnings.warn("batch holds a single class; alpha balancing zeroes the loss",
                      DegenerateBatchWarning, stacklevel=2)
    return LossOutput(
        total=float((alpha * loss).sum() / count),
        per_sample_weight=alpha,
        grad_wrt_outputs=alpha[:, None] * grad,
        diagnostics={"p_correct": float(pc.mean()), "gamma": 0.0},
    )


# ---------------------------------------------------------------- regression

def normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / _SQRT2)


def regression_p_correct(delta, scale):
    """Probability that the label error falls outside ``+-|delta|``:
    ``1 - (Phi(|d|/scale) - Phi(-|d|/scale)) = erfc(|d| / (scale * sqrt2))``."""
    delta = np.asarray(delta, dtype=np.float64)
    if not np.all(np.isfinite(delta)):
        raise DomainError("regression residuals must be finite")
    return erfc(np.abs(delta) / (np.asarray(scale, dtype=np.float64) * _SQRT2))


def column_scale(batch: RegressionBatch, variances: Mapping[str, TaskVariance], normalization: str):
    if normalization not in NORMALIZATIONS:
        raise DomainError(f"variance normalization must be one of {NORMALIZATIONS}")
    scale = np.empty(batch.predictions.shape[1])
    for name, cols in batch.target_groups.items():
        try:
            var = variances[name]
        except KeyError:
            raise DomainError(f"no task variance for target group {name!r}") from None
        s2 = var.sigma2
        if not s2 > 0:
            raise DomainError(f"variance of group {name!r} is not positive")
        scale[cols] = s2 if normalization == "squared" else math.sqrt(s2)
    return scale


def _base_terms(delta: np.ndarray, base: str):
    if base == "l2":
        return delta * delta, 2.0 * delta
    if base == "l1":
        return np.abs(delta), np.sign(delta)
    raise DomainError(f"regression base loss must be one of {BASES}, got {base!r}")


def regression_loss(batch: RegressionBatch, base: str = "l2") -> LossOutput:
    """Plain mean L1/L2 loss."""
    delta = batch.delta
    if not np.all(np.isfinite(delta)):
        raise DomainError("regression residuals must be finite")
    loss, dloss = _base_terms(delta, base)
    count = delta.size
    return LossOutput(
        total=float(loss.sum() / count),
        per_sample_weight=np.ones_like(delta),
        grad_wrt_outputs=dloss / count,
        diagnostics={"gamma": 0.0},
    )


def focal_regression(batch: RegressionBatch, variances: Mapping[str, TaskVariance], schedule: GammaSchedule,
                     tracker: ProgressTracker, base: str = "l2", normalization: str = "squared",
                     update_tracker: bool = True) -> LossOutput:
    """Focal-weighted L1/L2 loss plus ``log(sigma2 + 1)`` per target group.

    ``normalization="squared"`` divides residuals by sigma2, ``"std"`` by sigma.
    The weights are detached, so each variance is trained by its regularizer
    alone.
    """
    delta = batch.delta
    scale = column_scale(batch, variances, normalization)
    pc = regression_p_correct(delta, scale)
    batch_mean = float(pc.mean())
    p_hat = tracker.smoothed if tracker.initialized else batch_mean
    gamma = schedule(p_hat)
    weight = focal_weight(pc, gamma)
    loss, dloss = _base_terms(delta, base)
    count = delta.size
    reg = sum(variances[name].regularizer for name in batch.target_groups)
    total = float((weight * loss).sum() / count + reg)
    if update_tracker:
        tracker.observe(pc)
    return LossOutput(
        total=total,
        per_sample_weight=weight,
        grad_wrt_outputs=weight * (dloss / count),
        grad_wrt_variance={name: variances[name].regularizer_grad() for name in batch.target_groups},
        diagnostics={"p_correct": batch_mean, "gamma": gamma, "p_hat": float(p_hat), "regularizer": reg},
    )


def multiloss_combine(task_losses: Iterable[Tuple[float, TaskVariance]]) -> float:
    """Uncertainty-weighted sum ``sum_i L_i / (2 sigma2_i) + log(sigma2_i + 1)``."""
    total = 0.0
    for loss, var in task_losses:
        s2 = var.sigma2
        if not s2 > 0:
            raise DomainError("task variance must be positive")
        total += loss / (2.0 * s2) + math.log1p(s2)
    return total


def multiloss_regression(batch: RegressionBatch, variances: Mapping[str, TaskVariance],
                         base: str = "l2") -> LossOutput:
    """Each target group is a task: its mean base loss enters :func:`multiloss_combine`."""
    delta = batch.delta
    if not np.all(np.isfinite(delta)):
        raise DomainError("regression residuals must be finite")
    loss, dloss = _base_terms(delta, base)
    grad = np.empty_like(delta)
    grad_s = {}
    parts = []
    for name, cols in batch.target_groups.items():
        var = variances[name]
        s2 = var.sigma2
        task = float(loss[:, cols].mean())
        parts.append((task, var))
        grad[:, cols] = dloss[:, cols] / (2.0 * s2 * loss[:, cols].size)
        grad_s[name] = -task / (2.0 * s2) + var.regularizer_grad()
    return LossOutput(
        total=multiloss_combine(parts),
        per_sample_weight=np.ones_like(delta),
        grad_wrt_outputs=grad,
        grad_wrt_variance=grad_s,
        diagnostics={"gamma": 0.0},
    )


def weighted_sum_loss(losses: Iterable[Tuple[float, float]]) -> float:
    total = 0.0
    for loss, weight in losses:
        if not math.isfinite(weight):
            raise DomainError("loss weights must be finite")
        total += weight * loss
    return total

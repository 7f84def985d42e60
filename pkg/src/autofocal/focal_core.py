"""Focusing mathematics: correct-class probability, focal weights, automated
gamma schedules and the smoothed training-progress tracker.

gamma is always a deterministic function of the smoothed progress estimate
``p_hat``. Neither gamma nor ``p_hat`` carries gradient.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, EmptyBatchWarning

DEFAULT_CLAMP_MAX = 10.0
DEFAULT_SMOOTHING = 0.95


@dataclass(frozen=True)
class CorrectProbability:
    """A probability assigned to the correct outcome."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not 0.0 <= v <= 1.0:  # also rejects NaN
            raise DomainError(f"correct probability must lie in [0, 1], got {self.value!r}")
        object.__setattr__(self, "value", v)

    def __float__(self):
        return self.value


def _prob(x) -> float:
    if isinstance(x, CorrectProbability):
        return x.value
    return CorrectProbability(x).value


def p_correct(p, y):
    """Probability mass on the correct outcome: ``p`` if ``y == 1`` else ``1 - p``.

    Works element-wise on arrays; scalars return a :class:`CorrectProbability`.
    """
    p_arr = np.asarray(p, dtype=np.float64)
    y_arr = np.asarray(y)
    if not np.all((p_arr >= 0.0) & (p_arr <= 1.0)):
        raise DomainError("probabilities must lie in [0, 1]")
    if not np.all((y_arr == 0) | (y_arr == 1)):
        raise DomainError("labels must be binary")
    out = np.where(y_arr == 1, p_arr, 1.0 - p_arr)
    if out.ndim == 0:
        return CorrectProbability(float(out))
    return out


def focal_weight(pc, gamma):
    """``(1 - pc) ** gamma``; element-wise for arrays."""
    if np.any(np.asarray(gamma) < 0):
        raise DomainError("gamma must be non-negative")
    if isinstance(pc, CorrectProbability):
        return (1.0 - pc.value) ** float(gamma)
    pc_arr = np.asarray(pc, dtype=np.float64)
    out = np.power(1.0 - pc_arr, gamma)
    return float(out) if out.ndim == 0 else out


def _clamp(gamma: float, clamp_max: Optional[float]) -> float:
    gamma = max(gamma, 0.0)
    if clamp_max is not None:
        gamma = min(gamma, clamp_max)
    return gamma


def gamma_quantile(p_hat, h: float, clamp_max: Optional[float] = DEFAULT_CLAMP_MAX) -> float:
    """gamma such that a fraction ``k = h*p_hat + (1-h)`` of the focal-weight
    mass on [0, 1] lies below ``p_hat``.

    Diverges as ``p_hat -> 0`` (returns ``clamp_max``, or ``inf`` when
    unclamped) and vanishes at ``p_hat = 1``.
    """
    p = _prob(p_hat)
    if not 0.0 < h < 1.0:
        raise DomainError(f"h must lie in (0, 1), got {h!r}")
    if p == 0.0:
        return math.inf if clamp_max is None else float(clamp_max)
    if p == 1.0:
        return 0.0
    k = h * p + (1.0 - h)
    # log1p keeps precision when k or p_hat is close to 0
    gamma = math.log1p(-k) / math.log1p(-p) - 1.0
    return _clamp(gamma, clamp_max)


def gamma_info(p_hat, clamp_max: Optional[float] = DEFAULT_CLAMP_MAX) -> float:
    """Shannon information of a correct prediction, ``-ln(p_hat)``."""
    p = _prob(p_hat)
    if p == 0.0:
        return math.inf if clamp_max is None else float(clamp_max)
    if p == 1.0:
        return 0.0
    return _clamp(-math.log(p), clamp_max)


def expected_weight_exponent(p_hat) -> float:
    """Expected ``1 - p_correct`` given the progress estimate; diagnostics only."""
    return 1.0 - _prob(p_hat)


class ScheduleKind(enum.Enum):
    FIXED = "fixed"
    QUANTILE_H = "quantile"
    SHANNON_INFO = "info"


@dataclass(frozen=True)
class GammaSchedule:
    """Maps a progress estimate to a focusing exponent.

    Build one with :meth:`fixed`, :meth:`quantile` or :meth:`info`, or parse a
    string such as ``"info"``, ``"quantile:0.7"`` or ``"fixed:2"``.
    """

    kind: ScheduleKind
    gamma0: float = 0.0
    h: Optional[float] = None
    clamp_max: Optional[float] = DEFAULT_CLAMP_MAX

    def __post_init__(self):
        if self.kind is ScheduleKind.FIXED:
            if not (math.isfinite(self.gamma0) and self.gamma0 >= 0):
                raise DomainError(f"fixed gamma must be finite and >= 0, got {self.gamma0!r}")
        elif self.kind is ScheduleKind.QUANTILE_H:
            if self.h is None or not 0.0 < self.h < 1.0:
                raise DomainError(f"quantile schedule needs h in (0, 1), got {self.h!r}")
        if self.clamp_max is not None and not (math.isfinite(self.clamp_max) and self.clamp_max >= 0):
            raise DomainError("clamp_max must be finite and non-negative")

    @classmethod
    def fixed(cls, gamma0: float, clamp_max: Optional[float] = DEFAULT_CLAMP_MAX) -> "GammaSchedule":
        return cls(ScheduleKind.FIXED, gamma0=float(gamma0), clamp_max=clamp_max)

    @classmethod
    def quantile(cls, h: float = 0.7, clamp_max: Optional[float] = DEFAULT_CLAMP_MAX) -> "GammaSchedule":
        return cls(ScheduleKind.QUANTILE_H, h=float(h), clamp_max=clamp_max)

    @classmethod
    def info(cls, clamp_max: Optional[float] = DEFAULT_CLAMP_MAX) -> "GammaSchedule":
        return cls(ScheduleKind.SHANNON_INFO, clamp_max=clamp_max)

    @classmethod
    def parse(cls, text: str, clamp_max: Optional[float] = DEFAULT_CLAMP_MAX) -> "GammaSchedule":
        name, _, arg = text.strip().partition(":")
        name = name.strip().lower()
        if name in ("info", "shannon", "shannon-info"):
            if arg:
                raise DomainError("the information schedule takes no parameter")
            return cls.info(clamp_max)
        if name in ("quantile", "quantile-h"):
            return cls.quantile(float(arg) if arg else 0.7, clamp_max)
        if name == "fixed":
            if not arg:
                raise DomainError("fixed schedule needs a gamma value, e.g. 'fixed:2'")
            return cls.fixed(float(arg), clamp_max)
        raise DomainError(f"unknown gamma schedule {text!r}")

    def __call__(self, p_hat) -> float:
        if self.kind is ScheduleKind.FIXED:
            return _clamp(self.gamma0, self.clamp_max)
        if self.kind is ScheduleKind.QUANTILE_H:
            return gamma_quantile(p_hat, self.h, self.clamp_max)
        return gamma_info(p_hat, self.clamp_max)

    def __str__(self):
        if self.kind is ScheduleKind.FIXED:
            return f"fixed:{self.gamma0!r}"
        if self.kind is ScheduleKind.QUANTILE_H:
            return f"quantile:{self.h!r}"
        return "info"


class Policy(enum.Enum):
    """How a batch of correct-class probabilities is reduced to one mean."""

    SINGLE_TARGET = "single"
    MULTI_TARGET_ALL = "multi-all"
    MULTI_TARGET_POSITIVE = "multi-positive"


def batch_progress(pc, labels=None, policy: Policy = Policy.SINGLE_TARGET) -> Optional[float]:
    """Mean correct-class probability of one batch under ``policy``.

    For the multi-target policies ``pc`` and ``labels`` are ``(n, classes)``
    arrays; positive examples (at least one active class) contribute the mean
    over their active classes, negative examples the mean over all classes of
    ``1 - p`` (which is ``pc`` for inactive classes). Returns ``None`` when no
    sample survives filtering.
    """
    pc = np.asarray(pc, dtype=np.float64)
    if policy is Policy.SINGLE_TARGET:
        if pc.size == 0:
            return None
        return float(pc.mean())

    if labels is None:
        raise DomainError("multi-target progress needs the label masks")
    mask = np.asarray(labels).astype(bool)
    if pc.ndim != 2 or mask.shape != pc.shape:
        raise DomainError("multi-target progress needs matching (n, classes) arrays")
    n_active = mask.sum(axis=1)
    positive = n_active > 0
    pos_means = (pc * mask).sum(axis=1)[positive] / n_active[positive]
    if policy is Policy.MULTI_TARGET_POSITIVE:
        values = pos_means
    else:
        values = np.concatenate([pos_means, pc[~positive].mean(axis=1)]) if pc.shape[1] else pos_means
    if values.size == 0:
        return None
    return float(values.mean())


class ProgressTracker:
    """Exponentially smoothed estimate of the expected correct-class probability.

    The first observed batch mean initialises the estimate; afterwards
    ``new = factor * old + (1 - factor) * batch_mean``.
    """

    def __init__(self, smoothing_factor: float = DEFAULT_SMOOTHING, policy: Policy = Policy.SINGLE_TARGET,
                 smoothed: Optional[float] = None):
        if not 0.0 <= smoothing_factor < 1.0:
            raise DomainError(f"smoothing factor must lie in [0, 1), got {smoothing_factor!r}")
        self.smoothing_factor = float(smoothing_factor)
        self.policy = Policy(policy)
        self.smoothed = None if smoothed is None else _prob(smoothed)

    def __repr__(self):
        return (f"ProgressTracker(smoothed={self.smoothed!r}, "
                f"smoothing_factor={self.smoothing_factor!r}, policy={self.policy.value!r})")

    @property
    def initialized(self) -> bool:
        return self.smoothed is not None

    def copy(self) -> "ProgressTracker":
        return ProgressTracker(self.smoothing_factor, self.policy, self.smoothed)

    def update(self, batch_mean: float) -> float:
        m = _prob(batch_mean)
        if self.smoothed is None:
            self.smoothed = m
        else:
            f = self.smoothing_factor
            new = f * self.smoothed + (1.0 - f) * m
            # rounding can push a convex combination a hair outside its endpoints
            self.smoothed = min(max(new, min(self.smoothed, m)), max(self.smoothed, m))
        return self.smoothed

    def observe(self, pc, labels=None) -> Optional[float]:
        """Fold one batch into the estimate; returns the batch mean used (or None)."""
        m = batch_progress(pc, labels, self.policy)
        if m is None:
            warnings.warn("batch has no samples under the progress policy; tracker unchanged",
                          EmptyBatchWarning, stacklevel=2)
            return None
        self.update(m)
        return m


def update_progress(tracker: ProgressTracker, pc, labels=None) -> ProgressTracker:
    """Update ``tracker`` in place with one batch and return it."""
    tracker.observe(pc, labels)
    return tracker

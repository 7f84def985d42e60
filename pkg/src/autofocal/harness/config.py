"""Experiment configuration and its flat ``key = value`` text format.

Keys use dotted section prefixes::

    name = focal-info
    seed = 3
    dataset.kind = imbalanced-blobs
    dataset.imbalance_ratio = 100
    model.hidden = 32, 32
    loss.kind = focal
    loss.schedule = info
    optim.lr_start = 1e-3
    train.steps = 5000

Blank lines and ``#`` comments are ignored. Unknown keys are errors.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from ..data import DatasetSpec
from ..errors import DomainError
from ..focal_core import DEFAULT_CLAMP_MAX, DEFAULT_SMOOTHING, GammaSchedule, Policy

CLASSIFICATION_LOSSES = ("ce", "focal", "alpha")
REGRESSION_LOSSES = ("plain", "focal", "multiloss")


@dataclass(frozen=True)
class ModelSpec:
    hidden: Tuple[int, ...] = (32, 32)
    activation: str = "relu"


@dataclass(frozen=True)
class LossSpec:
    kind: str = "focal"
    schedule: str = "info"
    h: Optional[float] = None
    gamma: Optional[float] = None
    clamp_max: Optional[float] = DEFAULT_CLAMP_MAX
    smoothing: float = DEFAULT_SMOOTHING
    policy: str = "single"
    base: str = "l2"
    variance_normalization: str = "squared"
    initial_sigma2: float = 1.0
    cls_weight: float = 10.0
    reg_weight: float = 1.0

    def gamma_schedule(self) -> GammaSchedule:
        if self.schedule == "info":
            return GammaSchedule.info(self.clamp_max)
        if self.schedule == "quantile":
            return GammaSchedule.quantile(self.h, self.clamp_max)
        return GammaSchedule.fixed(self.gamma, self.clamp_max)

    def label(self) -> str:
        if self.kind != "focal":
            return self.kind
        return f"focal-{self.gamma_schedule()}"


@dataclass(frozen=True)
class OptimSpec:
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainSpec:
    steps: int = 5000
    batch_size: int = 32


@dataclass(frozen=True)
class EvalSpec:
    every: int = 50
    metric: str = "macro_f1"
    threshold: float = 0.9
    patience: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    optim: OptimSpec = field(default_factory=OptimSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    seed: int = 0
    name: str = ""
    out: Optional[str] = None
    plots: bool = False

    def __post_init__(self):
        validate(self)

    @property
    def task(self) -> str:
        kind = self.dataset.kind
        if kind == "imbalanced-blobs":
            return "classification"
        if kind == "multilabel-synthetic":
            return "multilabel"
        if kind == "noisy-regression":
            return "regression"
        return self.dataset.task

    @property
    def run_name(self) -> str:
        return self.name or self.loss.label()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same experiment under another seed (data and training)."""
        return dataclasses.replace(self, seed=seed, dataset=dataclasses.replace(self.dataset, seed=seed))

    def shared_setup(self):
        """Everything except the loss and bookkeeping; equal for comparable runs."""
        return (self.dataset, self.model, self.optim, self.train, self.eval, self.seed)


def validate(cfg: ExperimentConfig):
    loss = cfg.loss
    task = cfg.task
    allowed = REGRESSION_LOSSES if task == "regression" else CLASSIFICATION_LOSSES
    if loss.kind not in allowed:
        raise DomainError(f"loss.kind must be one of {allowed} for {task} data, got {loss.kind!r}")
    if loss.kind == "alpha" and task != "classification":
        raise DomainError("alpha balancing needs single-target classification data")
    if loss.kind == "focal":
        if loss.schedule not in ("info", "quantile", "fixed"):
            raise DomainError(f"loss.schedule must be info, quantile or fixed, got {loss.schedule!r}")
        if (loss.h is not None) != (loss.schedule == "quantile"):
            raise DomainError("loss.h is required for, and only for, the quantile schedule")
        if (loss.gamma is not None) != (loss.schedule == "fixed"):
            raise DomainError("loss.gamma is required for, and only for, the fixed schedule")
        loss.gamma_schedule()  # range checks
    Policy(loss.policy)
    if task == "classification" and loss.policy != "single":
        raise DomainError("single-target classification uses loss.policy = single")
    if loss.base not in ("l1", "l2"):
        raise DomainError("loss.base must be l1 or l2")
    if loss.variance_normalization not in ("squared", "std"):
        raise DomainError("loss.variance_normalization must be squared or std")
    if not loss.initial_sigma2 > 0:
        raise DomainError("loss.initial_sigma2 must be positive")
    if not 0.0 <= loss.smoothing < 1.0:
        raise DomainError("loss.smoothing must lie in [0, 1)")
    for w in (loss.cls_weight, loss.reg_weight):
        if not math.isfinite(w):
            raise DomainError("loss weights must be finite")
    if cfg.model.activation not in ("relu", "tanh", "sigmoid"):
        raise DomainError("model.activation must be relu, tanh or sigmoid")
    if any(h <= 0 for h in cfg.model.hidden):
        raise DomainError("model.hidden sizes must be positive")
    if cfg.train.steps < 0 or cfg.train.batch_size <= 0:
        raise DomainError("train.steps must be >= 0 and train.batch_size > 0")
    if cfg.eval.every <= 0 or cfg.eval.patience <= 0:
        raise DomainError("eval.every and eval.patience must be positive")
    if not (cfg.optim.lr_start > 0 and cfg.optim.lr_end > 0):
        raise DomainError("learning rates must be positive")


# ---------------------------------------------------------------- text format

_SECTIONS = {"dataset": DatasetSpec, "model": ModelSpec, "loss": LossSpec, "optim": OptimSpec,
             "train": TrainSpec, "eval": EvalSpec}
_TOP = ("seed", "name", "out", "plots")


def _convert(text: str, f: dataclasses.Field):
    text = text.strip()
    kind = str(f.type)
    if text.lower() in ("none", "") and "Optional" in kind:
        return None
    try:
        if kind == "bool":
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if "float" in kind:
            return float(text)
        if kind.startswith("Tuple[int") or kind.startswith("Sequence[str"):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return tuple(int(p) for p in parts) if "int" in kind else tuple(parts)
    except ValueError:
        raise DomainError(f"cannot parse {text!r} as {kind}") from None
    return text


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    sections: Dict[str, Dict[str, object]] = {name: {} for name in _SECTIONS}
    top: Dict[str, object] = {}
    top_fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DomainError(f"{source}:{lineno}: expected 'key = value'")
        key = key.strip()
        section, dot, attr = key.partition(".")
        try:
            if dot:
                if section not in _SECTIONS:
                    raise DomainError(f"unknown section {section!r}")
                fields = {f.name: f for f in dataclasses.fields(_SECTIONS[section])}
                if attr not in fields:
                    raise DomainError(f"unknown key {key!r}")
                sections[section][attr] = _convert(value, fields[attr])
            else:
                if key not in _TOP:
                    raise DomainError(f"unknown key {key!r}")
                top[key] = _convert(value, top_fields[key])
        except DomainError as exc:
            raise DomainError(f"{source}:{lineno}: {exc}") from None
    if "seed" in top and "seed" not in sections["dataset"]:
        sections["dataset"]["seed"] = top["seed"]
    try:
        built = {name: cls(**sections[name]) for name, cls in _SECTIONS.items()}
        return ExperimentConfig(**built, **top)
    except (DomainError, TypeError, ValueError) as exc:
        raise DomainError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DomainError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def parse_dataset_spec(text: str, source: str = "<spec>") -> DatasetSpec:
    """A dataset spec file: ``dataset.``-prefixed or bare keys."""
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line and not line.startswith("dataset.") and "=" in line:
            line = "dataset." + line
        lines.append(line)
    return parse_config("\n".join(lines), source).dataset


def dump_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config` (every key written explicitly)."""
    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, (tuple, list)):
            return ", ".join(str(x) for x in v)
        return str(v)

    lines = [f"{k} = {fmt(getattr(cfg, k))}" for k in _TOP if getattr(cfg, k) is not None]
    for name in _SECTIONS:
        sub = getattr(cfg, name)
        for f in dataclasses.fields(sub):
            lines.append(f"{name}.{f.name} = {fmt(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"

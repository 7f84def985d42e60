"""Synthetic desk-scale datasets with controllable imbalance, label noise and
outliers, plus CSV import/export."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .errors import DomainError

KINDS = ("imbalanced-blobs", "multilabel-synthetic", "noisy-regression", "csv-file")
TASKS = ("classification", "multilabel", "regression")
FUNCTIONS = ("affine", "sine")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "imbalanced-blobs"
    n_samples: int = 10100
    n_features: int = 2
    n_classes: int = 2
    n_targets: int = 1
    # majority:minority, e.g. 100.0 for 1:100
    imbalance_ratio: float = 1.0
    separation: float = 3.0
    blob_std: float = 1.0
    label_density: float = 0.3
    noise_std: float = 0.1
    outlier_fraction: float = 0.0
    outlier_magnitude: float = 0.0
    function: str = "affine"
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0
    path: Optional[str] = None
    task: Optional[str] = None
    feature_columns: Sequence[str] = ()
    label_columns: Sequence[str] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"dataset kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "csv-file":
            if not self.path:
                raise DomainError("csv-file datasets need a path")
            if self.task not in TASKS:
                raise DomainError(f"csv-file datasets need a task in {TASKS}")
        else:
            for name in ("n_samples", "n_features", "n_classes", "n_targets"):
                if getattr(self, name) <= 0:
                    raise DomainError(f"{name} must be positive")
        if not self.imbalance_ratio >= 1.0:
            raise DomainError("imbalance ratio must be >= 1")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise DomainError("outlier fraction must lie in [0, 1)")
        if self.noise_std < 0 or self.outlier_magnitude < 0 or self.blob_std < 0:
            raise DomainError("noise and outlier magnitudes must be non-negative")
        if self.function not in FUNCTIONS:
            raise DomainError(f"regression function must be one of {FUNCTIONS}")
        if not 0.0 < self.label_density <= 1.0:
            raise DomainError("label density must lie in (0, 1]")
        if self.val_fraction < 0 or self.test_fraction < 0 or self.val_fraction + self.test_fraction >= 1:
            raise DomainError("validation and test fractions must be non-negative and sum below 1")


@dataclass
class Dataset:
    """Features ``(n, d)`` with labels shaped per ``task``:
    class indices ``(n,)``, binary masks ``(n, classes)`` or targets ``(n, targets)``."""

    features: np.ndarray
    labels: np.ndarray
    task: str
    n_classes: Optional[int] = None
    clean_labels: Optional[np.ndarray] = None
    outlier_mask: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None
    feature_names: List[str] = field(default_factory=list)
    label_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.task not in TASKS:
            raise DomainError(f"task must be one of {TASKS}")
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DomainError("features must be a 2-d array")
        if len(self.labels) != len(self.features):
            raise DomainError("features and labels differ in length")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.features.shape[1])]
        if not self.label_names:
            if self.task == "classification":
                self.label_names = ["label"]
            else:
                width = self.labels.shape[1] if self.labels.ndim == 2 else 1
                self.label_names = [f"y{i}" for i in range(width)]

    def __len__(self):
        return len(self.features)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        base = self.indices if self.indices is not None else np.arange(len(self))
        return replace(self, features=self.features[idx], labels=self.labels[idx],
                       clean_labels=pick(self.clean_labels), outlier_mask=pick(self.outlier_mask),
                       indices=base[idx])

    def samples(self):
        """Iterate ``(features, label)`` pairs."""
        return zip(self.features, self.labels)


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    full: Dataset

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def _class_counts(spec: DatasetSpec) -> np.ndarray:
    c = spec.n_classes
    if c < 2:
        raise DomainError("classification needs at least two classes")
    minority = int(round(spec.n_samples / (spec.imbalance_ratio + c - 1)))
    majority = spec.n_samples - minority * (c - 1)
    if minority == 0 or majority <= 0:
        raise DomainError("spec is infeasible: a class count rounds to zero")
    return np.array([majority] + [minority] * (c - 1))


def _blobs(spec: DatasetSpec, rng) -> Dataset:
    counts = _class_counts(spec)
    d = spec.n_features
    centers = np.zeros((spec.n_classes, d))
    for c in range(1, spec.n_classes):
        direction = rng.standard_normal(d)
        centers[c] = spec.separation * direction / np.linalg.norm(direction)
    labels = np.repeat(np.arange(spec.n_classes), counts)
    features = centers[labels] + spec.blob_std * rng.standard_normal((spec.n_samples, d))
    order = rng.permutation(spec.n_samples)
    return Dataset(features[order], labels[order], "classification", n_classes=spec.n_classes)


def _multilabel(spec: DatasetSpec, rng) -> Dataset:
    n, c, d = spec.n_samples, spec.n_classes, spec.n_features
    n_pos = int(round(n / (spec.imbalance_ratio + 1)))
    if n_pos == 0:
        raise DomainError("spec is infeasible: positive example count rounds to zero")
    masks = np.zeros((n, c), dtype=np.int64)
    active = rng.random((n_pos, c)) < spec.label_density
    # every positive example gets at least one active class
    forced = rng.integers(0, c, size=n_pos)
    active[np.arange(n_pos), forced] = True
    masks[:n_pos] = active
    prototypes = rng.standard_normal((c, d))
    prototypes *= spec.separation / np.linalg.norm(prototypes, axis=1, keepdims=True)
    features = masks @ prototypes + spec.blob_std * rng.standard_normal((n, d))
    order = rng.permutation(n)
    return Dataset(features[order], masks[order], "multilabel", n_classes=c)


def _regression(spec: DatasetSpec, rng) -> Dataset:
    n, d, t = spec.n_samples, spec.n_features, spec.n_targets
    x = rng.uniform(-1.0, 1.0, size=(n, d))
    weights = rng.standard_normal((d, t))
    bias = rng.standard_normal(t)
    if spec.function == "affine":
        truth = x @ weights + bias
    else:
        truth = np.sin(math.pi * (x @ weights) / math.sqrt(d)) + bias
    labels = truth + spec.noise_std * rng.standard_normal((n, t))
    n_out = int(round(spec.outlier_fraction * n))
    outliers = np.zeros(n, dtype=bool)
    if n_out:
        rows = rng.choice(n, size=n_out, replace=False)
        outliers[rows] = True
        signs = rng.choice([-1.0, 1.0], size=(n_out, t))
        labels[rows] += spec.outlier_magnitude * signs
    return Dataset(x, labels, "regression", clean_labels=truth, outlier_mask=outliers)


def split(dataset: Dataset, val_fraction: float, test_fraction: float, seed: int) -> Splits:
    """Shuffle and cut into disjoint train/validation/test parts."""
    n = len(dataset)
    order = np.random.default_rng([seed, 1]).permutation(n)
    n_test = int(round(test_fraction * n))
    n_val = int(round(val_fraction * n))
    full = dataset if dataset.indices is not None else replace(dataset, indices=np.arange(n))
    test = full.subset(order[:n_test])
    val = full.subset(order[n_test:n_test + n_val])
    train = full.subset(order[n_test + n_val:])
    if len(train) == 0:
        raise DomainError("split leaves no training samples")
    return Splits(train, val, test, full)


def generate(spec: DatasetSpec) -> Splits:
    """Build the dataset described by ``spec`` and split it; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "imbalanced-blobs":
        ds = _blobs(spec, rng)
    elif spec.kind == "multilabel-synthetic":
        ds = _multilabel(spec, rng)
    elif spec.kind == "noisy-regression":
        ds = _regression(spec, rng)
    else:
        ds = load_csv(spec.path, spec.task, spec.feature_columns, spec.label_columns)
    return split(ds, spec.val_fraction, spec.test_fraction, spec.seed)


# ---------------------------------------------------------------- CSV

def _fmt(x) -> str:
    return format(float(x), ".17g")


def save_csv(dataset: Dataset, path):
    """Write features then labels, one sample per row, with a header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.feature_names + dataset.label_names)
        labels = dataset.labels if dataset.labels.ndim == 2 else dataset.labels[:, None]
        for feats, lab in zip(dataset.features, labels):
            if dataset.task == "regression":
                lab_cells = [_fmt(v) for v in lab]
            else:
                lab_cells = [str(int(v)) for v in lab]
            w.writerow([_fmt(v) for v in feats] + lab_cells)


def load_csv(path, task: str, feature_columns: Sequence[str] = (), label_columns: Sequence[str] = (),
             n_classes: Optional[int] = None) -> Dataset:
    """Read a headered CSV into a :class:`Dataset`.

    ``label_columns`` names the label column(s); ``feature_columns`` defaults
    to every other column. Errors carry the row and column at fault.
    """
    if task not in TASKS:
        raise DomainError(f"task must be one of {TASKS}")
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DomainError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise DomainError(f"{path}: no data rows")
    label_columns = list(label_columns) or (["label"] if task == "classification" else [])
    if not label_columns:
        raise DomainError("label columns must be declared")
    missing = [c for c in list(label_columns) + list(feature_columns) if c not in header]
    if missing:
        raise DomainError(f"{path}: schema mismatch, missing columns {missing}")
    if task == "classification" and len(label_columns) != 1:
        raise DomainError("classification takes exactly one label column")
    feature_columns = list(feature_columns) or [c for c in header if c not in label_columns]
    if not feature_columns:
        raise DomainError(f"{path}: no feature columns")
    fidx = [header.index(c) for c in feature_columns]
    lidx = [header.index(c) for c in label_columns]

    def cell(row, lineno, j, conv):
        try:
            return conv(row[j])
        except IndexError:
            raise DomainError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}") from None
        except ValueError:
            raise DomainError(f"{path}: row {lineno}, column {header[j]!r}: cannot parse {row[j]!r}") from None

    def as_int(text):
        v = float(text)
        if v != int(v):
            raise ValueError(text)
        return int(v)

    features = np.empty((len(body), len(fidx)))
    lconv = float if task == "regression" else as_int
    labels = np.empty((len(body), len(lidx)), dtype=np.float64 if task == "regression" else np.int64)
    for i, row in enumerate(body):
        lineno = i + 2
        if len(row) != len(header):
            raise DomainError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
        features[i] = [cell(row, lineno, j, float) for j in fidx]
        labels[i] = [cell(row, lineno, j, lconv) for j in lidx]
    if task == "classification":
        labels = labels[:, 0]
        if labels.min() < 0:
            raise DomainError(f"{path}: negative class label")
        n_classes = n_classes or int(labels.max()) + 1
    elif task == "multilabel":
        if not np.all((labels == 0) | (labels == 1)):
            raise DomainError(f"{path}: multilabel columns must be 0/1")
        n_classes = labels.shape[1]
    return Dataset(features, labels, task, n_classes=n_classes,
                   feature_names=feature_columns, label_names=label_columns)

"""Multi-task dataset containers, synthetic generation, CSV I/O, splitting.

A dataset is a list of per-task blocks. Features are stored as a
(feature_dim x n) matrix per task, columns are samples. Classification
labels are 1-based integers in [1..k]; regression targets are floats.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParseError, ShapeError, SplitError, UsageError
from .numerics import ensure_finite, substream

CLASSIFICATION = "classification"
REGRESSION = "regression"
MODES = (CLASSIFICATION, REGRESSION)

_GEN_KEY = 101
_SPLIT_KEY = 202


@dataclass
class TaskDataset:
    task_id: int
    features: np.ndarray  # feature_dim x n, columns are samples
    labels: np.ndarray  # (n,) ints (classification) or floats (regression)

    @property
    def n(self) -> int:
        return self.features.shape[1]


@dataclass
class MultiTaskDataset:
    tasks: list[TaskDataset]
    mode: str
    num_classes: Optional[int] = None  # classification only

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if not self.tasks:
            raise UsageError("dataset has no tasks")
        self.tasks = sorted(self.tasks, key=lambda t: t.task_id)
        ids = [t.task_id for t in self.tasks]
        if ids != list(range(1, len(ids) + 1)):
            raise UsageError(f"task ids must cover 1..m without gaps, got {ids}")
        p = self.tasks[0].features.shape[0]
        for t in self.tasks:
            if t.features.ndim != 2 or t.features.shape[0] != p:
                raise ShapeError(f"task {t.task_id}: feature dim {t.features.shape} != shared dim {p}")
            if t.features.shape[1] < 1:
                raise UsageError(f"task {t.task_id} has no samples")
            if len(t.labels) != t.features.shape[1]:
                raise ShapeError(f"task {t.task_id}: {len(t.labels)} labels for {t.features.shape[1]} samples")
            ensure_finite(f"task {t.task_id} features", t.features)
        if self.mode == CLASSIFICATION:
            if self.num_classes is None or self.num_classes < 1:
                raise UsageError("classification dataset needs num_classes >= 1")
            for t in self.tasks:
                lab = np.asarray(t.labels)
                if not np.issubdtype(lab.dtype, np.integer):
                    raise UsageError(f"task {t.task_id}: classification labels must be integers")
                if lab.min() < 1 or lab.max() > self.num_classes:
                    raise UsageError(
                        f"task {t.task_id}: labels outside [1..{self.num_classes}]"
                    )
        else:
            if self.num_classes is not None:
                raise UsageError("regression dataset must not set num_classes")
            for t in self.tasks:
                ensure_finite(f"task {t.task_id} targets", np.asarray(t.labels, dtype=float))

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def feature_dim(self) -> int:
        return self.tasks[0].features.shape[0]


@dataclass
class SplitSpec:
    train_proportion: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.train_proportion < 1.0):
            raise UsageError(f"train_proportion must lie in (0,1), got {self.train_proportion}")


def _rotate_first_two(vectors: np.ndarray, angle: float) -> np.ndarray:
    """Rotate the first two coordinates of each row by `angle` radians."""
    out = vectors.copy()
    c, s = math.cos(angle), math.sin(angle)
    x, y = vectors[:, 0].copy(), vectors[:, 1].copy()
    out[:, 0] = c * x - s * y
    out[:, 1] = s * x + c * y
    return out


def generate_synthetic_mtl(
    num_tasks: int,
    num_classes: int,
    feature_dim: int,
    n_per_class: int,
    task_rotation_angle: float = 0.2,
    cluster_spread: float = 0.5,
    seed: int = 0,
) -> MultiTaskDataset:
    """Related classification tasks from rotated shared class templates.

    A common set of k Gaussian class centers is drawn once; task t sees the
    centers rotated in the first two coordinates by (t-1) * angle, so all
    tasks share structure but none coincide (unless angle = 0). Samples are
    centers plus isotropic noise of scale `cluster_spread`.
    """
    if num_tasks < 2 or num_classes < 2 or feature_dim < 2:
        raise UsageError("generate_synthetic_mtl needs num_tasks >= 2, num_classes >= 2, feature_dim >= 2")
    if n_per_class < 1:
        raise UsageError("n_per_class must be >= 1")
    rng = substream(seed, _GEN_KEY)
    # Template scale keeps class separation O(1) regardless of feature_dim,
    # so cluster_spread directly controls overlap.
    template = rng.normal(0.0, 1.0, size=(num_classes, feature_dim)) * (2.0 / math.sqrt(feature_dim))
    tasks = []
    for t in range(1, num_tasks + 1):
        centers = _rotate_first_two(template, (t - 1) * task_rotation_angle)
        cols = []
        labels = []
        for cls in range(1, num_classes + 1):
            noise = rng.standard_normal((n_per_class, feature_dim))
            samples = centers[cls - 1][None, :] + cluster_spread * noise
            cols.append(samples.T)
            labels.extend([cls] * n_per_class)
        tasks.append(
            TaskDataset(
                task_id=t,
                features=np.concatenate(cols, axis=1),
                labels=np.asarray(labels, dtype=np.int64),
            )
        )
    return MultiTaskDataset(tasks=tasks, mode=CLASSIFICATION, num_classes=num_classes)


def generate_synthetic_regression(
    num_tasks: int,
    feature_dim: int,
    n_per_task: int,
    task_rotation_angle: float = 0.2,
    noise: float = 0.1,
    seed: int = 0,
) -> MultiTaskDataset:
    """Related regression tasks: one linear template, rotated per task."""
    if num_tasks < 2 or feature_dim < 2 or n_per_task < 1:
        raise UsageError("generate_synthetic_regression needs num_tasks >= 2, feature_dim >= 2, n_per_task >= 1")
    rng = substream(seed, _GEN_KEY, 1)
    template = rng.normal(0.0, 1.0, size=(1, feature_dim)) / math.sqrt(feature_dim)
    tasks = []
    for t in range(1, num_tasks + 1):
        w = _rotate_first_two(template, (t - 1) * task_rotation_angle)[0]
        x = rng.standard_normal((feature_dim, n_per_task))
        y = w @ x + noise * rng.standard_normal(n_per_task)
        tasks.append(TaskDataset(task_id=t, features=x, labels=y))
    return MultiTaskDataset(tasks=tasks, mode=REGRESSION)


def _expected_header(p: int) -> list[str]:
    return ["task_id", "label"] + [f"f{i}" for i in range(1, p + 1)]


def load_csv_dataset(path, mode: str, expected_classes: Optional[int] = None) -> MultiTaskDataset:
    """Read a dataset from CSV (`task_id,label,f1,...,fp`, header required)."""
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}, expected one of {MODES}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        p = len(header) - 2
        if p < 1 or header != _expected_header(p):
            raise ParseError(f"{path}: line 1: header must be task_id,label,f1,...,fp")
        by_task: dict[int, tuple[list, list]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != p + 2:
                raise ParseError(f"{path}: line {lineno}: expected {p + 2} cells, got {len(row)}")
            try:
                task_id = int(row[0])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad task_id {row[0]!r}") from None
            if task_id < 1:
                raise ParseError(f"{path}: line {lineno}: task_id must be >= 1")
            if mode == CLASSIFICATION:
                try:
                    label = int(row[1])
                except ValueError:
                    raise ParseError(f"{path}: line {lineno}: bad class label {row[1]!r}") from None
                if label < 1:
                    raise ParseError(f"{path}: line {lineno}: class label must be >= 1")
                if expected_classes is not None and label > expected_classes:
                    raise ParseError(
                        f"{path}: line {lineno}: class label {label} exceeds {expected_classes}"
                    )
            else:
                try:
                    label = float(row[1])
                except ValueError:
                    raise ParseError(f"{path}: line {lineno}: bad target {row[1]!r}") from None
                if not math.isfinite(label):
                    raise ParseError(f"{path}: line {lineno}: non-finite target")
            feats = []
            for j, cell in enumerate(row[2:], start=1):
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: line {lineno}: non-numeric feature f{j}={cell!r}") from None
                if not math.isfinite(val):
                    raise ParseError(f"{path}: line {lineno}: non-finite feature f{j}")
                feats.append(val)
            cols, labels = by_task.setdefault(task_id, ([], []))
            cols.append(feats)
            labels.append(label)
    if not by_task:
        raise ParseError(f"{path}: no data rows")
    ids = sorted(by_task)
    if ids != list(range(1, len(ids) + 1)):
        raise ParseError(f"{path}: task ids must cover 1..m without gaps, got {ids}")
    tasks = []
    for task_id in ids:
        cols, labels = by_task[task_id]
        features = np.asarray(cols, dtype=float).T
        if mode == CLASSIFICATION:
            tasks.append(TaskDataset(task_id, features, np.asarray(labels, dtype=np.int64)))
        else:
            tasks.append(TaskDataset(task_id, features, np.asarray(labels, dtype=float)))
    if mode == CLASSIFICATION:
        k = expected_classes if expected_classes is not None else max(int(t.labels.max()) for t in tasks)
        return MultiTaskDataset(tasks=tasks, mode=CLASSIFICATION, num_classes=k)
    return MultiTaskDataset(tasks=tasks, mode=REGRESSION)


def write_csv_dataset(ds: MultiTaskDataset, path) -> None:
    """Inverse of load_csv_dataset; floats are written with full precision."""
    p = ds.feature_dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_expected_header(p))
        for task in ds.tasks:
            for j in range(task.n):
                if ds.mode == CLASSIFICATION:
                    label = str(int(task.labels[j]))
                else:
                    label = repr(float(task.labels[j]))
                writer.writerow([task.task_id, label] + [repr(float(v)) for v in task.features[:, j]])


def _canonical_order(features: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Order sample indices by their feature tuples (f1 primary).

    Sorting by content rather than input position makes the split invariant
    to the order samples arrived in.
    """
    keys = features[::-1][:, idx]
    return idx[np.lexsort(keys)]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(ds: MultiTaskDataset, spec: SplitSpec) -> tuple[MultiTaskDataset, MultiTaskDataset]:
    """Stratified train/test split: per task, and per class for classification.

    Each stratum keeps at least one sample on both sides; the train count is
    the proportion rounded half-up, clamped to [1, n-1]. Deterministic in
    the seed and independent of input sample order.
    """
    train_tasks, test_tasks = [], []
    for task in ds.tasks:
        if ds.mode == CLASSIFICATION:
            strata = [(cls, np.flatnonzero(task.labels == cls)) for cls in range(1, ds.num_classes + 1)]
        else:
            strata = [(0, np.arange(task.n))]
        train_idx, test_idx = [], []
        for cls, idx in strata:
            name = f"task {task.task_id}" + (f" class {cls}" if ds.mode == CLASSIFICATION else "")
            if len(idx) < 2:
                raise SplitError(f"{name} has {len(idx)} sample(s); need at least 2 to split")
            ordered = _canonical_order(task.features, idx)
            n_train = max(1, min(len(idx) - 1, _round_half_up(spec.train_proportion * len(idx))))
            rng = substream(spec.seed, _SPLIT_KEY, task.task_id, cls)
            perm = rng.permutation(len(ordered))
            chosen = set(ordered[perm[:n_train]].tolist())
            train_idx.extend(i for i in ordered if i in chosen)
            test_idx.extend(i for i in ordered if i not in chosen)
        train_idx = np.asarray(train_idx, dtype=int)
        test_idx = np.asarray(test_idx, dtype=int)
        train_tasks.append(TaskDataset(task.task_id, task.features[:, train_idx], task.labels[train_idx]))
        test_tasks.append(TaskDataset(task.task_id, task.features[:, test_idx], task.labels[test_idx]))
    train = MultiTaskDataset(tasks=train_tasks, mode=ds.mode, num_classes=ds.num_classes)
    test = MultiTaskDataset(tasks=test_tasks, mode=ds.mode, num_classes=ds.num_classes)
    return train, test


@dataclass
class StandardizeStats:
    mean: np.ndarray  # (feature_dim,)
    scale: np.ndarray  # (feature_dim,); 1.0 where the training variance was zero


def _apply_standardize(ds: MultiTaskDataset, stats: StandardizeStats) -> MultiTaskDataset:
    tasks = [
        TaskDataset(
            t.task_id,
            (t.features - stats.mean[:, None]) / stats.scale[:, None],
            t.labels.copy(),
        )
        for t in ds.tasks
    ]
    return MultiTaskDataset(tasks=tasks, mode=ds.mode, num_classes=ds.num_classes)


def standardize(
    train: MultiTaskDataset, test: MultiTaskDataset
) -> tuple[MultiTaskDataset, MultiTaskDataset, StandardizeStats]:
    """Zero-mean/unit-variance per feature, fitted on pooled training data.

    The same affine map is applied to the test set; features with zero
    training variance are centered and left unscaled (so they become 0 on
    the training side). Statistics never see the test set.
    """
    pooled = np.concatenate([t.features for t in train.tasks], axis=1)
    mean = pooled.mean(axis=1)
    std = pooled.std(axis=1)
    scale = np.where(std > 1e-12, std, 1.0)
    stats = StandardizeStats(mean=mean, scale=scale)
    return _apply_standardize(train, stats), _apply_standardize(test, stats), stats

"""Optimization: Adam with a 1/(1+p) learning-rate decay, the training
loop, finite-difference gradient checking, and metric evaluation.

Training is a pure function of (initial parameters, data, config seed):
repeated runs produce bit-identical trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import CLASSIFICATION, MultiTaskDataset, SplitSpec, TaskDataset, split
from .errors import NumericError, ShapeError, UsageError
from .model import (
    ForwardCache,
    HGNNModel,
    backward,
    compute_embeddings,
    forward,
    parameters,
    predict_class,
    predict_regression,
    regression_loss,
    training_loss_and_grads,
)
from .numerics import substream

_SHUFFLE_KEY = 404


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus the decay counter.

    The effective learning rate is base_lr / (1 + schedule_step); the
    counter advances per optimizer step or per epoch depending on who owns
    it (the training loop advances it per epoch by default).
    """

    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    base_lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0  # bias-correction counter, advances every step
    schedule_step: int = 0  # decay counter p
    per_step_schedule: bool = False

    @property
    def learning_rate(self) -> float:
        return self.base_lr / (1.0 + self.schedule_step)


def make_adam_state(model: HGNNModel, base_lr: float = 0.02, per_step_schedule: bool = False) -> AdamState:
    params = parameters(model)
    return AdamState(
        first_moment={k: np.zeros_like(v) for k, v in params.items()},
        second_moment={k: np.zeros_like(v) for k, v in params.items()},
        base_lr=base_lr,
        per_step_schedule=per_step_schedule,
    )


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """One in-place Adam update with bias correction."""
    lr = state.learning_rate
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    if state.per_step_schedule:
        state.schedule_step += 1


def snapshot_parameters(model: HGNNModel) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in parameters(model).items()}


def restore_parameters(model: HGNNModel, snapshot: dict[str, np.ndarray]) -> None:
    for name, arr in parameters(model).items():
        arr[...] = snapshot[name]
    model.version += 1


def used_parameter_names(model: HGNNModel) -> list[str]:
    """Parameters that actually influence the active variant's output."""
    cfg = model.config
    names = []
    for name in parameters(model):
        if name.startswith("intra.") and cfg.variant == "baseline":
            continue
        if name.startswith("attn_task.") and not cfg.uses_task_embeddings:
            continue
        if name.startswith("attn_class.") and not cfg.uses_class_embeddings:
            continue
        names.append(name)
    return names


@dataclass
class ParamCheck:
    max_rel_error: float
    checked: int
    skipped: int


@dataclass
class GradCheckReport:
    per_parameter: dict[str, ParamCheck]
    tolerance: float
    passed: bool
    failures: list[str]

    def summary(self) -> str:
        lines = [f"gradient check: {'PASS' if self.passed else 'FAIL'} (tolerance {self.tolerance:g})"]
        for name, chk in self.per_parameter.items():
            flag = "ok" if chk.max_rel_error < self.tolerance else "FAIL"
            lines.append(
                f"  {name}: max_rel_err={chk.max_rel_error:.3e} checked={chk.checked} skipped={chk.skipped} [{flag}]"
            )
        return "\n".join(lines)


def _signatures_equal(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    model: HGNNModel,
    dataset: MultiTaskDataset,
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    analytic: Optional[dict[str, np.ndarray]] = None,
) -> GradCheckReport:
    """Central finite differences vs the analytic backward pass.

    Uses similarity graphs frozen at the base point so both sides
    differentiate the same function. Coordinates whose activation gates or
    pooling argmaxes differ between +/-10*eps perturbations sit next to a
    kink and are skipped. Requires a float64 model.

    `analytic` overrides the computed gradients (fault-injection hook for
    tests); normally leave it None.
    """
    if model.config.dtype != "float64":
        raise UsageError("grad_check requires a float64 model")
    base_cache = forward(model, dataset)
    frozen = base_cache.graphs
    if analytic is None:
        _, d_logits = training_loss_and_grads(model, base_cache)
        analytic = backward(model, base_cache, d_logits)

    def loss_at() -> tuple[float, ForwardCache]:
        cache = forward(model, dataset, frozen_graphs=frozen)
        loss, _ = training_loss_and_grads(model, cache)
        return loss, cache

    params = parameters(model)
    report: dict[str, ParamCheck] = {}
    failures: list[str] = []
    for name in used_parameter_names(model):
        arr = params[name]
        max_err = 0.0
        checked = 0
        skipped = 0
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + 10 * eps
            _, cache_hi = loss_at()
            flat[j] = orig - 10 * eps
            _, cache_lo = loss_at()
            near_kink = not _signatures_equal(
                cache_hi.decision_signature(), cache_lo.decision_signature()
            )
            if near_kink:
                flat[j] = orig
                skipped += 1
                continue
            flat[j] = orig + eps
            hi, _ = loss_at()
            flat[j] = orig - eps
            lo, _ = loss_at()
            flat[j] = orig
            fd = (hi - lo) / (2 * eps)
            a = float(analytic[name].reshape(-1)[j])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-3)
            max_err = max(max_err, err)
            checked += 1
        report[name] = ParamCheck(max_rel_error=max_err, checked=checked, skipped=skipped)
        if max_err >= tolerance:
            failures.append(name)
    return GradCheckReport(
        per_parameter=report,
        tolerance=tolerance,
        passed=not failures,
        failures=failures,
    )


def evaluate(model: HGNNModel, embeddings, dataset: MultiTaskDataset) -> float:
    """Classification accuracy, or summed per-task mean squared error."""
    if dataset.mode != model.config.mode:
        raise UsageError(f"dataset mode {dataset.mode!r} != model mode {model.config.mode!r}")
    if model.config.mode == CLASSIFICATION:
        correct = 0
        total = 0
        for task in dataset.tasks:
            for j in range(task.n):
                pred = predict_class(model, embeddings, task.features[:, j], task.task_id)
                correct += int(pred == int(task.labels[j]))
                total += 1
        return correct / total
    preds = [
        np.array([predict_regression(model, embeddings, t.features[:, j], t.task_id) for j in range(t.n)])
        for t in dataset.tasks
    ]
    return regression_loss(preds, [t.labels for t in dataset.tasks])


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: Optional[int] = None  # None = full batch
    seed: int = 0
    base_lr: float = 0.02
    lr_schedule: str = "epoch"  # decay counter advances per epoch or per step
    patience: int = 25
    val_fraction: float = 0.2
    embedding_mode: str = "full"  # pooling view: whole training set or the batch

    def __post_init__(self):
        if self.epochs < 0:
            raise UsageError("epochs must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.lr_schedule not in ("epoch", "step"):
            raise UsageError("lr_schedule must be 'epoch' or 'step'")
        if self.embedding_mode not in ("full", "batch"):
            raise UsageError("embedding_mode must be 'full' or 'batch'")
        if not (0.0 <= self.val_fraction < 1.0):
            raise UsageError("val_fraction must lie in [0,1)")


@dataclass
class LogRecord:
    epoch: int
    step: int
    loss: float
    val_metric: float
    lr: float


@dataclass
class TrainResult:
    model: HGNNModel
    trajectory: list[LogRecord]
    best_val_metric: Optional[float]
    epochs_run: int
    diverged: bool
    embedding_view: Optional[MultiTaskDataset] = None  # the view pooling saw


def _batch_view(dataset: MultiTaskDataset, cols: list[np.ndarray]) -> MultiTaskDataset:
    tasks = [
        TaskDataset(t.task_id, t.features[:, c], t.labels[c])
        for t, c in zip(dataset.tasks, cols)
    ]
    return MultiTaskDataset(tasks=tasks, mode=dataset.mode, num_classes=dataset.num_classes)


def _epoch_batches(
    dataset: MultiTaskDataset, batch_size: Optional[int], seed: int, epoch: int
) -> list[list[np.ndarray]]:
    """Per-step, per-task column indices. Tasks with fewer batches cycle."""
    if batch_size is None:
        return [[np.arange(t.n) for t in dataset.tasks]]
    chunks = []
    for task in dataset.tasks:
        rng = substream(seed, _SHUFFLE_KEY, epoch, task.task_id)
        perm = rng.permutation(task.n)
        chunks.append([perm[s : s + batch_size] for s in range(0, task.n, batch_size)])
    n_steps = max(len(c) for c in chunks)
    return [[c[s % len(c)] for c in chunks] for s in range(n_steps)]


def train(model: HGNNModel, dataset: MultiTaskDataset, config: TrainConfig) -> TrainResult:
    """Train in place; returns the trajectory and leaves the model at the
    parameters with the best validation metric.

    A non-finite loss aborts the run and restores the last finite state.
    """
    if config.epochs == 0:
        return TrainResult(
            model=model,
            trajectory=[],
            best_val_metric=None,
            epochs_run=0,
            diverged=False,
            embedding_view=dataset,
        )

    inner_train, val = dataset, dataset
    if config.val_fraction > 0.0:
        try:
            inner_train, val = split(dataset, SplitSpec(1.0 - config.val_fraction, seed=config.seed))
        except UsageError:
            inner_train, val = dataset, dataset  # strata too small; validate on train

    higher_better = model.config.mode == CLASSIFICATION
    state = make_adam_state(model, config.base_lr, per_step_schedule=(config.lr_schedule == "step"))

    class_cache: Optional[dict[tuple[int, int], np.ndarray]] = None
    if config.embedding_mode == "batch" and model.config.uses_class_embeddings:
        emb = compute_embeddings(model, inner_train)
        k = model.config.num_classes
        class_cache = {}
        for i, task in enumerate(inner_train.tasks):
            for cls in range(1, k + 1):
                class_cache[(task.task_id, cls)] = emb.raw_class[:, i * k + (cls - 1)].copy()

    trajectory: list[LogRecord] = []
    best_score = -math.inf
    best_snapshot = None
    best_val = None
    stall = 0
    diverged = False
    step_counter = 0
    last_loss = math.nan
    epochs_run = 0

    for epoch in range(config.epochs):
        if config.lr_schedule == "epoch":
            state.schedule_step = epoch
        lr = state.learning_rate
        for step_cols in _epoch_batches(inner_train, config.batch_size, config.seed, epoch):
            prev = snapshot_parameters(model)
            try:
                if config.embedding_mode == "batch":
                    view = _batch_view(inner_train, step_cols)
                    cache = forward(model, view, class_value_cache=class_cache)
                else:
                    cache = forward(model, inner_train, loss_cols=step_cols)
                loss, d_logits = training_loss_and_grads(model, cache)
                if not math.isfinite(loss):
                    raise NumericError("training loss is not finite")
                grads = backward(model, cache, d_logits)
                adam_step(state, parameters(model), grads)
                model.version += 1
            except NumericError:
                restore_parameters(model, prev)
                diverged = True
                break
            if class_cache is not None and cache.embeddings is not None:
                emb = cache.embeddings
                k = model.config.num_classes
                for i, task in enumerate(view.tasks):
                    for cls in range(1, k + 1):
                        node = i * k + (cls - 1)
                        if not emb.class_from_cache[node]:
                            class_cache[(task.task_id, cls)] = emb.raw_class[:, node].copy()
            last_loss = loss
            step_counter += 1
        if diverged:
            break
        epochs_run = epoch + 1
        try:
            val_metric = evaluate(model, compute_embeddings(model, inner_train), val)
        except NumericError:
            restore_parameters(model, prev)
            diverged = True
            break
        trajectory.append(LogRecord(epoch=epoch, step=step_counter, loss=last_loss, val_metric=val_metric, lr=lr))
        score = val_metric if higher_better else -val_metric
        if score > best_score:
            best_score = score
            best_val = val_metric
            best_snapshot = snapshot_parameters(model)
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break

    if best_snapshot is not None:
        restore_parameters(model, best_snapshot)
    return TrainResult(
        model=model,
        trajectory=trajectory,
        best_val_metric=best_val,
        epochs_run=epochs_run,
        diverged=diverged,
        embedding_view=inner_train,
    )

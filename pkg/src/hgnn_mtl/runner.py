"""Multi-seed experiment orchestration used by the CLI and the tests.

One run = split by proportion, standardize, init, train, evaluate on the
held-out test split. Seeds control the split, the init, and the batch
shuffles, so two variants run under the same seed see identical data.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import CLASSIFICATION, MultiTaskDataset, SplitSpec, split, standardize
from .hgnn import EmbeddingSet
from .model import HGNNModel, ModelConfig, compute_embeddings, init_model
from .training import LogRecord, TrainConfig, evaluate, train


@dataclass
class ModelDims:
    hidden_dim: int = 64
    task_emb_dim: int = 8
    class_emb_dim: int = 8
    intra_layers: int = 1
    activation: str = "relu"
    dtype: str = "float64"


@dataclass
class SeedRunResult:
    seed: int
    train_loss: float
    val_metric: Optional[float]
    test_metric: float
    epochs_run: int
    diverged: bool
    trajectory: list[LogRecord] = field(repr=False, default_factory=list)


@dataclass
class RunReport:
    variant: str
    proportion: float
    results: list[SeedRunResult]
    metric_mean: float
    metric_std: float
    wall_clock_s: float

    def metrics(self) -> np.ndarray:
        return np.array([r.test_metric for r in self.results])


def run_single(
    dataset: MultiTaskDataset,
    variant: str,
    proportion: float,
    seed: int,
    dims: ModelDims,
    train_config: TrainConfig,
) -> tuple[SeedRunResult, HGNNModel, Optional[EmbeddingSet]]:
    train_raw, test_raw = split(dataset, SplitSpec(proportion, seed=seed))
    train_ds, test_ds, _ = standardize(train_raw, test_raw)
    config = ModelConfig(
        mode=dataset.mode,
        variant=variant,
        num_tasks=dataset.num_tasks,
        feature_dim=dataset.feature_dim,
        num_classes=dataset.num_classes,
        hidden_dim=dims.hidden_dim,
        task_emb_dim=dims.task_emb_dim,
        class_emb_dim=dims.class_emb_dim,
        intra_layers=dims.intra_layers,
        activation=dims.activation,
        dtype=dims.dtype,
    )
    model = init_model(config, seed=seed)
    tcfg = TrainConfig(
        epochs=train_config.epochs,
        batch_size=train_config.batch_size,
        seed=seed,
        base_lr=train_config.base_lr,
        lr_schedule=train_config.lr_schedule,
        patience=train_config.patience,
        val_fraction=train_config.val_fraction,
        embedding_mode=train_config.embedding_mode,
    )
    outcome = train(model, train_ds, tcfg)
    embeddings = compute_embeddings(model, outcome.embedding_view)
    test_metric = evaluate(model, embeddings, test_ds)
    last_loss = outcome.trajectory[-1].loss if outcome.trajectory else float("nan")
    result = SeedRunResult(
        seed=seed,
        train_loss=last_loss,
        val_metric=outcome.best_val_metric,
        test_metric=test_metric,
        epochs_run=outcome.epochs_run,
        diverged=outcome.diverged,
        trajectory=outcome.trajectory,
    )
    return result, model, embeddings


def run_seeds(
    dataset: MultiTaskDataset,
    variant: str,
    proportion: float,
    seeds: list[int],
    dims: ModelDims,
    train_config: TrainConfig,
) -> tuple[RunReport, HGNNModel]:
    """Repeat the experiment over seeds; also returns the model whose
    validation metric was best (ties break to the smallest seed)."""
    start = time.perf_counter()
    results = []
    best_model = None
    best_score = -np.inf
    higher_better = dataset.mode == CLASSIFICATION
    for seed in seeds:
        result, model, _ = run_single(dataset, variant, proportion, seed, dims, train_config)
        results.append(result)
        val = result.val_metric
        if val is None:
            score = -np.inf if best_model is not None else 0.0
        else:
            score = val if higher_better else -val
        if score > best_score:
            best_score = score
            best_model = model
    metrics = np.array([r.test_metric for r in results])
    std = float(metrics.std(ddof=1)) if len(metrics) > 1 else 0.0
    report = RunReport(
        variant=variant,
        proportion=proportion,
        results=results,
        metric_mean=float(metrics.mean()),
        metric_std=std,
        wall_clock_s=time.perf_counter() - start,
    )
    return report, best_model

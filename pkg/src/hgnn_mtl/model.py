"""Full multi-task model: shared layer, feature augmentation, per-task heads.

Variants:
  "full"     augment with task and class embeddings
  "t"        task embeddings only
  "c"        class embeddings only
  "baseline" no augmentation (plain shared-layer multi-task net)

The per-sample representation fed to a head is always the shared
transform's output for that sample; the graph layer's output is used only
for pooling embeddings. Similarity graphs are rebuilt each forward pass
and treated as constants by the backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import graph as graph_mod
from .data import CLASSIFICATION, REGRESSION, MODES, MultiTaskDataset
from .errors import MissingClassError, ShapeError, UsageError
from .hgnn import (
    AttentionStack,
    EmbeddingSet,
    IntraCache,
    IntraLayer,
    SharedTransform,
    StackCache,
    activate,
    activation_deriv,
    attention_stack_backward,
    attention_stack_forward,
    intra_task_gnn,
    intra_task_gnn_backward,
    pool_class_embedding,
    pool_task_embedding,
    shared_transform,
    shared_transform_backward,
)
from .numerics import ensure_finite, softmax_vector, substream

VARIANTS = ("baseline", "t", "c", "full")

_INIT_KEY = 303


@dataclass
class ModelConfig:
    mode: str
    variant: str
    num_tasks: int
    feature_dim: int
    num_classes: Optional[int] = None
    hidden_dim: int = 64
    task_emb_dim: int = 8
    class_emb_dim: int = 8
    intra_layers: int = 1
    activation: str = "relu"
    dtype: str = "float64"

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}")
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.mode == REGRESSION and self.variant in ("c", "full"):
            raise UsageError(
                "regression has no class embeddings; use variant 't' or 'baseline'"
            )
        if self.mode == CLASSIFICATION and (self.num_classes is None or self.num_classes < 1):
            raise UsageError("classification model needs num_classes >= 1")
        if self.mode == REGRESSION and self.num_classes is not None:
            raise UsageError("regression model must not set num_classes")
        for name in ("num_tasks", "feature_dim", "hidden_dim", "task_emb_dim", "class_emb_dim", "intra_layers"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise UsageError("dtype must be 'float64' or 'float32'")

    @property
    def uses_task_embeddings(self) -> bool:
        return self.variant in ("t", "full")

    @property
    def uses_class_embeddings(self) -> bool:
        return self.variant in ("c", "full") and self.mode == CLASSIFICATION

    @property
    def augmented_dim(self) -> int:
        dim = self.hidden_dim
        if self.uses_task_embeddings:
            dim += self.task_emb_dim
        if self.uses_class_embeddings:
            dim += self.class_emb_dim
        return dim

    @property
    def head_rows(self) -> int:
        return self.num_classes if self.mode == CLASSIFICATION else 1

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


@dataclass
class Head:
    weight: np.ndarray  # head_rows x augmented_dim
    bias: np.ndarray  # (head_rows,)


@dataclass
class HGNNModel:
    config: ModelConfig
    shared: SharedTransform
    intra: list[list[IntraLayer]]  # per task, per layer
    attn_task: AttentionStack
    attn_class: Optional[AttentionStack]
    heads: list[Head]
    version: int = 0  # bumped on parameter updates; guards stale caches


def _glorot(rng: np.random.Generator, rows: int, cols: int, dtype) -> np.ndarray:
    s = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, size=(rows, cols)).astype(dtype)


def init_model(config: ModelConfig, seed: int = 0) -> HGNNModel:
    """Seeded symmetric-uniform weight init, zero biases.

    All parameter groups are allocated regardless of variant so that
    unused groups demonstrably do not influence restricted variants.
    """
    rng = substream(seed, _INIT_KEY)
    dt = config.np_dtype
    shared = SharedTransform(
        weight=_glorot(rng, config.hidden_dim, config.feature_dim, dt),
        bias=np.zeros(config.hidden_dim, dtype=dt),
        activation=config.activation,
    )
    intra = [
        [
            IntraLayer(
                weight=_glorot(rng, config.hidden_dim, config.feature_dim, dt),
                bias=np.zeros(config.hidden_dim, dtype=dt),
            )
            for _ in range(config.intra_layers)
        ]
        for _ in range(config.num_tasks)
    ]
    attn_task = AttentionStack(
        weight1=_glorot(rng, config.task_emb_dim, config.hidden_dim, dt),
        weight2=_glorot(rng, config.task_emb_dim, config.task_emb_dim, dt),
        activation=config.activation,
    )
    attn_class = None
    if config.mode == CLASSIFICATION:
        attn_class = AttentionStack(
            weight1=_glorot(rng, config.class_emb_dim, config.hidden_dim, dt),
            weight2=_glorot(rng, config.class_emb_dim, config.class_emb_dim, dt),
            activation=config.activation,
        )
    heads = [
        Head(
            weight=_glorot(rng, config.head_rows, config.augmented_dim, dt),
            bias=np.zeros(config.head_rows, dtype=dt),
        )
        for _ in range(config.num_tasks)
    ]
    return HGNNModel(
        config=config,
        shared=shared,
        intra=intra,
        attn_task=attn_task,
        attn_class=attn_class,
        heads=heads,
    )


def parameters(model: HGNNModel) -> dict[str, np.ndarray]:
    """Named views of every learnable array, in a stable order."""
    out: dict[str, np.ndarray] = {
        "shared.weight": model.shared.weight,
        "shared.bias": model.shared.bias,
    }
    for i, layers in enumerate(model.intra, start=1):
        for l, layer in enumerate(layers, start=1):
            out[f"intra.task{i}.layer{l}.weight"] = layer.weight
            out[f"intra.task{i}.layer{l}.bias"] = layer.bias
    out["attn_task.layer1.weight"] = model.attn_task.weight1
    out["attn_task.layer2.weight"] = model.attn_task.weight2
    if model.attn_class is not None:
        out["attn_class.layer1.weight"] = model.attn_class.weight1
        out["attn_class.layer2.weight"] = model.attn_class.weight2
    for i, head in enumerate(model.heads, start=1):
        out[f"head.task{i}.weight"] = head.weight
        out[f"head.task{i}.bias"] = head.bias
    return out


def zero_gradients(model: HGNNModel) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in parameters(model).items()}


@dataclass
class ForwardCache:
    """Every intermediate the backward pass and prediction need."""

    model_version: int
    features: list[np.ndarray]
    labels: list[np.ndarray]
    sel: list[np.ndarray]  # per task, columns contributing to the loss
    shared_preacts: list[np.ndarray]
    hiddens: list[np.ndarray]
    graphs: Optional[list[np.ndarray]]
    intra_caches: Optional[list[IntraCache]]
    intra_outs: Optional[list[np.ndarray]]
    task_argmax: Optional[list[np.ndarray]]
    class_argmax: Optional[list[dict[int, np.ndarray]]]
    embeddings: Optional[EmbeddingSet]
    task_stack_cache: Optional[StackCache]
    class_stack_cache: Optional[StackCache]
    augmented: list[np.ndarray]
    logits: list[np.ndarray]

    def decision_signature(self) -> list[np.ndarray]:
        """Discrete choices made by this pass (activation gates, argmaxes).

        Two passes with equal signatures lie in the same smooth region of
        the loss, which is what finite-difference checking relies on.
        """
        config_masks: list[np.ndarray] = []
        for pre in self.shared_preacts:
            config_masks.append(pre > 0)
        if self.intra_caches is not None:
            for c in self.intra_caches:
                for pre in c.preacts:
                    config_masks.append(pre > 0)
        if self.task_argmax is not None:
            config_masks.extend(self.task_argmax)
        if self.class_argmax is not None:
            for per_task in self.class_argmax:
                for cls in sorted(per_task):
                    config_masks.append(per_task[cls])
        for stack_cache in (self.task_stack_cache, self.class_stack_cache):
            if stack_cache is not None:
                for layer in (stack_cache.layer1, stack_cache.layer2):
                    config_masks.append(layer.combined > 0)
                    config_masks.append(layer.active)
        for aug_logits in self.logits:
            config_masks.append(np.asarray(aug_logits.shape))
        return config_masks


def _check_dataset(model: HGNNModel, dataset: MultiTaskDataset) -> None:
    cfg = model.config
    if dataset.mode != cfg.mode:
        raise UsageError(f"dataset mode {dataset.mode!r} does not match model mode {cfg.mode!r}")
    if dataset.num_tasks != cfg.num_tasks:
        raise ShapeError(f"dataset has {dataset.num_tasks} tasks, model expects {cfg.num_tasks}")
    if dataset.feature_dim != cfg.feature_dim:
        raise ShapeError(
            f"dataset feature dim {dataset.feature_dim} != model feature dim {cfg.feature_dim}"
        )
    if cfg.mode == CLASSIFICATION and dataset.num_classes != cfg.num_classes:
        raise ShapeError(
            f"dataset has {dataset.num_classes} classes, model expects {cfg.num_classes}"
        )


def forward(
    model: HGNNModel,
    dataset: MultiTaskDataset,
    loss_cols: Optional[list[np.ndarray]] = None,
    frozen_graphs: Optional[list[np.ndarray]] = None,
    class_value_cache: Optional[dict[tuple[int, int], np.ndarray]] = None,
) -> ForwardCache:
    """Run the full pipeline over `dataset` (the embedding view).

    `loss_cols` restricts which columns feed the heads (mini-batch losses
    with full-set pooling); embeddings always pool over the whole view.
    `frozen_graphs` substitutes precomputed similarity matrices (used by
    gradient checking so the differentiated function matches the one the
    backward pass assumes). `class_value_cache` supplies pooled class
    embeddings for classes absent from the view (mini-batch pooling mode);
    cached values are constants to the backward pass.
    """
    _check_dataset(model, dataset)
    cfg = model.config
    dt = cfg.np_dtype
    m = cfg.num_tasks
    k = cfg.num_classes or 0

    features = [t.features.astype(dt, copy=False) for t in dataset.tasks]
    labels = [t.labels for t in dataset.tasks]
    sel = (
        [np.asarray(c, dtype=int) for c in loss_cols]
        if loss_cols is not None
        else [np.arange(t.n) for t in dataset.tasks]
    )

    shared_preacts, hiddens = [], []
    for x in features:
        h, pre = shared_transform(model.shared, x)
        shared_preacts.append(pre)
        hiddens.append(h)

    graphs = intra_caches = intra_outs = None
    task_argmax = class_argmax = None
    embeddings = None
    task_stack_cache = class_stack_cache = None

    if cfg.variant != "baseline":
        if frozen_graphs is not None:
            graphs = frozen_graphs
        elif cfg.mode == CLASSIFICATION:
            graphs = [
                graph_mod.build_classification_adjacency(hiddens[i], labels[i]) for i in range(m)
            ]
        else:
            graphs = [graph_mod.build_regression_adjacency(hiddens[i]) for i in range(m)]
        intra_caches, intra_outs = [], []
        for i in range(m):
            out, c = intra_task_gnn(
                model.intra[i], cfg.activation, features[i], hiddens[i], graphs[i]
            )
            intra_caches.append(c)
            intra_outs.append(out)

        raw_task = np.empty((cfg.hidden_dim, m), dtype=dt)
        task_argmax = []
        for i in range(m):
            emb, arg = pool_task_embedding(intra_outs[i])
            raw_task[:, i] = emb
            task_argmax.append(arg)

        updated_task = task_attention = None
        if cfg.uses_task_embeddings:
            updated_task, task_attention, task_stack_cache = attention_stack_forward(
                model.attn_task, raw_task
            )

        raw_class = updated_class = class_attention = class_from_cache = None
        if cfg.uses_class_embeddings:
            raw_class = np.empty((cfg.hidden_dim, m * k), dtype=dt)
            class_from_cache = np.zeros(m * k, dtype=bool)
            class_argmax = []
            for i in range(m):
                per_task: dict[int, np.ndarray] = {}
                for cls in range(1, k + 1):
                    node = i * k + (cls - 1)
                    try:
                        emb, arg = pool_class_embedding(intra_outs[i], labels[i], cls)
                        raw_class[:, node] = emb
                        per_task[cls] = arg
                    except MissingClassError:
                        key = (dataset.tasks[i].task_id, cls)
                        if class_value_cache is None or key not in class_value_cache:
                            raise
                        raw_class[:, node] = class_value_cache[key]
                        class_from_cache[node] = True
                class_argmax.append(per_task)
            updated_class, class_attention, class_stack_cache = attention_stack_forward(
                model.attn_class, raw_class
            )

        embeddings = EmbeddingSet(
            raw_task=raw_task,
            updated_task=updated_task,
            task_attention=task_attention,
            raw_class=raw_class,
            updated_class=updated_class,
            class_attention=class_attention,
            class_from_cache=class_from_cache,
        )

    augmented, logits = [], []
    for i in range(m):
        cols = sel[i]
        parts = [hiddens[i][:, cols]]
        if cfg.uses_task_embeddings:
            parts.append(np.repeat(embeddings.updated_task[:, i : i + 1], len(cols), axis=1))
        if cfg.uses_class_embeddings:
            nodes = i * k + (labels[i][cols].astype(int) - 1)
            parts.append(embeddings.updated_class[:, nodes])
        aug = np.concatenate(parts, axis=0)
        head = model.heads[i]
        out = head.weight @ aug + head.bias[:, None]
        ensure_finite(f"task {i + 1} head output", out)
        augmented.append(aug)
        logits.append(out)

    return ForwardCache(
        model_version=model.version,
        features=features,
        labels=labels,
        sel=sel,
        shared_preacts=shared_preacts,
        hiddens=hiddens,
        graphs=graphs,
        intra_caches=intra_caches,
        intra_outs=intra_outs,
        task_argmax=task_argmax,
        class_argmax=class_argmax,
        embeddings=embeddings,
        task_stack_cache=task_stack_cache,
        class_stack_cache=class_stack_cache,
        augmented=augmented,
        logits=logits,
    )


def compute_embeddings(model: HGNNModel, dataset: MultiTaskDataset) -> Optional[EmbeddingSet]:
    """Embeddings pooled over `dataset`; None for the baseline variant."""
    return forward(model, dataset).embeddings


def classification_loss(logits_by_task: list[np.ndarray], labels_by_task: list[np.ndarray]) -> float:
    """Mean softmax cross-entropy per task, summed over tasks."""
    loss, _ = classification_loss_grad(logits_by_task, labels_by_task)
    return loss


def classification_loss_grad(
    logits_by_task: list[np.ndarray], labels_by_task: list[np.ndarray]
) -> tuple[float, list[np.ndarray]]:
    total = 0.0
    grads = []
    for logits, labels in zip(logits_by_task, labels_by_task):
        ensure_finite("classification_loss logits", logits)
        n = logits.shape[1]
        rows = np.asarray(labels, dtype=int) - 1
        shifted = logits - logits.max(axis=0, keepdims=True)
        expd = np.exp(shifted)
        denom = expd.sum(axis=0)
        log_probs = shifted - np.log(denom)[None, :]
        total += float(-log_probs[rows, np.arange(n)].mean())
        probs = expd / denom[None, :]
        d = probs
        d[rows, np.arange(n)] -= 1.0
        grads.append(d / n)
    return total, grads


def regression_loss(preds_by_task: list[np.ndarray], targets_by_task: list[np.ndarray]) -> float:
    """Mean squared error per task, summed over tasks."""
    loss, _ = regression_loss_grad(preds_by_task, targets_by_task)
    return loss


def regression_loss_grad(
    preds_by_task: list[np.ndarray], targets_by_task: list[np.ndarray]
) -> tuple[float, list[np.ndarray]]:
    total = 0.0
    grads = []
    for preds, targets in zip(preds_by_task, targets_by_task):
        preds = np.asarray(preds, dtype=float).ravel()
        targets = np.asarray(targets, dtype=float).ravel()
        if preds.shape != targets.shape:
            raise ShapeError(f"{preds.shape} predictions vs {targets.shape} targets")
        diff = preds - targets
        total += float((diff * diff).mean())
        grads.append((2.0 * diff / len(diff))[None, :])
    return total, grads


def training_loss_and_grads(model: HGNNModel, cache: ForwardCache) -> tuple[float, list[np.ndarray]]:
    """Loss over the selected columns plus the matching head-output gradients."""
    labels_sel = [cache.labels[i][cache.sel[i]] for i in range(len(cache.labels))]
    if model.config.mode == CLASSIFICATION:
        return classification_loss_grad(cache.logits, labels_sel)
    preds = [lg[0] for lg in cache.logits]
    return regression_loss_grad(preds, labels_sel)


def backward(
    model: HGNNModel, cache: ForwardCache, d_logits_by_task: list[np.ndarray]
) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of the loss w.r.t. every parameter.

    Similarity graphs and cache-reused class embeddings are constants.
    Max-pool gradients route to the stored argmax columns; ReLU passes
    nothing at exactly 0.
    """
    if cache.model_version != model.version:
        raise UsageError("forward cache is stale: parameters changed since it was built")
    cfg = model.config
    m = cfg.num_tasks
    k = cfg.num_classes or 0
    grads = zero_gradients(model)

    d_hidden = [np.zeros_like(h) for h in cache.hiddens]
    d_updated_task = (
        np.zeros_like(cache.embeddings.updated_task) if cfg.uses_task_embeddings else None
    )
    d_updated_class = (
        np.zeros_like(cache.embeddings.updated_class) if cfg.uses_class_embeddings else None
    )

    for i in range(m):
        dlog = d_logits_by_task[i].astype(cfg.np_dtype, copy=False)
        aug = cache.augmented[i]
        if dlog.shape != cache.logits[i].shape:
            raise ShapeError(f"task {i + 1}: gradient shape {dlog.shape} != logits {cache.logits[i].shape}")
        head = model.heads[i]
        grads[f"head.task{i + 1}.weight"] += dlog @ aug.T
        grads[f"head.task{i + 1}.bias"] += dlog.sum(axis=1)
        d_aug = head.weight.T @ dlog
        cols = cache.sel[i]  # unique within a pass, so buffered add is safe
        offset = cfg.hidden_dim
        d_hidden[i][:, cols] += d_aug[:offset]
        if cfg.uses_task_embeddings:
            d_updated_task[:, i] += d_aug[offset : offset + cfg.task_emb_dim].sum(axis=1)
            offset += cfg.task_emb_dim
        if cfg.uses_class_embeddings:
            nodes = i * k + (cache.labels[i][cols].astype(int) - 1)
            np.add.at(d_updated_class.T, nodes, d_aug[offset:].T)

    if cfg.variant != "baseline":
        d_intra_out = [np.zeros_like(h) for h in cache.intra_outs]
        dims = np.arange(cfg.hidden_dim)

        if cfg.uses_class_embeddings:
            d_raw_class, dw1, dw2 = attention_stack_backward(
                model.attn_class, cache.class_stack_cache, d_updated_class
            )
            grads["attn_class.layer1.weight"] += dw1
            grads["attn_class.layer2.weight"] += dw2
            from_cache = cache.embeddings.class_from_cache
            for i in range(m):
                for cls in range(1, k + 1):
                    node = i * k + (cls - 1)
                    if from_cache is not None and from_cache[node]:
                        continue
                    d_intra_out[i][dims, cache.class_argmax[i][cls]] += d_raw_class[:, node]

        if cfg.uses_task_embeddings:
            d_raw_task, dw1, dw2 = attention_stack_backward(
                model.attn_task, cache.task_stack_cache, d_updated_task
            )
            grads["attn_task.layer1.weight"] += dw1
            grads["attn_task.layer2.weight"] += dw2
            for i in range(m):
                d_intra_out[i][dims, cache.task_argmax[i]] += d_raw_task[:, i]

        for i in range(m):
            d_ws, d_bs, d_h = intra_task_gnn_backward(
                model.intra[i],
                cfg.activation,
                cache.features[i],
                cache.graphs[i],
                cache.intra_caches[i],
                d_intra_out[i],
            )
            for l in range(cfg.intra_layers):
                grads[f"intra.task{i + 1}.layer{l + 1}.weight"] += d_ws[l]
                grads[f"intra.task{i + 1}.layer{l + 1}.bias"] += d_bs[l]
            d_hidden[i] += d_h

    for i in range(m):
        dw, db = shared_transform_backward(
            model.shared, cache.features[i], cache.shared_preacts[i], d_hidden[i]
        )
        grads["shared.weight"] += dw
        grads["shared.bias"] += db
    return grads


def _transform_sample(model: HGNNModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=model.config.np_dtype)
    if x.ndim != 1 or x.shape[0] != model.config.feature_dim:
        raise ShapeError(f"sample has shape {x.shape}, expected ({model.config.feature_dim},)")
    pre = model.shared.weight @ x + model.shared.bias
    return activate(model.shared.activation, pre)


def predict_class(
    model: HGNNModel, embeddings: Optional[EmbeddingSet], x: np.ndarray, task_id: int
) -> int:
    """Predicted 1-based class for one test sample of one task.

    With class embeddings in play, every class's embedding is tried in the
    concatenation and the class with the highest own-probability wins; ties
    break to the smallest class index.
    """
    cfg = model.config
    if cfg.mode != CLASSIFICATION:
        raise UsageError("predict_class requires a classification model")
    i = task_id - 1
    if not (0 <= i < cfg.num_tasks):
        raise UsageError(f"task_id {task_id} outside [1..{cfg.num_tasks}]")
    h = _transform_sample(model, x)
    head = model.heads[i]
    k = cfg.num_classes
    task_part = None
    if cfg.uses_task_embeddings:
        task_part = embeddings.updated_task[:, i]
    if not cfg.uses_class_embeddings:
        vec = h if task_part is None else np.concatenate([h, task_part])
        probs = softmax_vector(head.weight @ vec + head.bias)
        return int(np.argmax(probs)) + 1
    self_prob = np.empty(k)
    for cls in range(1, k + 1):
        class_part = embeddings.updated_class[:, i * k + (cls - 1)]
        parts = [h] if task_part is None else [h, task_part]
        parts.append(class_part)
        vec = np.concatenate(parts)
        probs = softmax_vector(head.weight @ vec + head.bias)
        self_prob[cls - 1] = probs[cls - 1]
    return int(np.argmax(self_prob)) + 1


def predict_regression(
    model: HGNNModel, embeddings: Optional[EmbeddingSet], x: np.ndarray, task_id: int
) -> float:
    """Scalar head output for one test sample of one task."""
    cfg = model.config
    if cfg.mode != REGRESSION:
        raise UsageError("predict_regression requires a regression model")
    i = task_id - 1
    if not (0 <= i < cfg.num_tasks):
        raise UsageError(f"task_id {task_id} outside [1..{cfg.num_tasks}]")
    h = _transform_sample(model, x)
    if cfg.uses_task_embeddings:
        vec = np.concatenate([h, embeddings.updated_task[:, i]])
    else:
        vec = h
    head = model.heads[i]
    return float((head.weight @ vec + head.bias)[0])

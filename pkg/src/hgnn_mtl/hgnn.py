"""Hierarchical feature-augmentation layers.

The pipeline per task: a shared affine+activation transform of raw
features, a graph layer mixing hidden representations through the task's
similarity matrix, max-pooling into task and per-class embeddings, and two
stacked cosine-attention layers that update the embeddings across tasks
(and across all task/class pairs). Augmentation concatenates the shared
transform's per-sample output with the updated embeddings.

Every forward function returns the values the matching backward function
needs; backward passes are hand-derived reverse-mode gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MissingClassError, ShapeError, UsageError
from .numerics import colwise_argmax, colwise_max, softmax_rows

ZERO_NORM_GUARD = 1e-12


def activate(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "identity":
        return x
    raise UsageError(f"unknown activation {kind!r}")


def activation_deriv(kind: str, preact: np.ndarray) -> np.ndarray:
    """Derivative w.r.t. the pre-activation; the ReLU subgradient at 0 is 0."""
    if kind == "relu":
        return (preact > 0).astype(preact.dtype)
    if kind == "identity":
        return np.ones_like(preact)
    raise UsageError(f"unknown activation {kind!r}")


@dataclass
class SharedTransform:
    """Affine map + activation shared by every task (one instance per model)."""

    weight: np.ndarray  # hidden_dim x feature_dim
    bias: np.ndarray  # (hidden_dim,)
    activation: str = "relu"


def shared_transform(params: SharedTransform, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Columnwise act(W x + b). Returns (hidden, preact)."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != params.weight.shape[1]:
        raise ShapeError(
            f"shared_transform: weight {params.weight.shape} cannot consume input {x.shape}"
        )
    preact = params.weight @ x + params.bias[:, None]
    return activate(params.activation, preact), preact


def shared_transform_backward(
    params: SharedTransform, x: np.ndarray, preact: np.ndarray, d_hidden: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    d_pre = d_hidden * activation_deriv(params.activation, preact)
    return d_pre @ x.T, d_pre.sum(axis=1)


@dataclass
class IntraLayer:
    weight: np.ndarray  # hidden_dim x feature_dim
    bias: np.ndarray  # (hidden_dim,)


@dataclass
class IntraCache:
    preacts: list[np.ndarray]


def intra_task_gnn(
    layers: list[IntraLayer],
    activation: str,
    x: np.ndarray,
    hidden: np.ndarray,
    graph: np.ndarray,
) -> tuple[np.ndarray, IntraCache]:
    """Stacked graph layers: act(W x + Z G + b), Z starting at `hidden`.

    The skip term W x reads the raw features at every layer; the graph term
    mixes the previous layer's output through the similarity matrix.
    """
    n = x.shape[1]
    if graph.shape != (n, n):
        raise ShapeError(f"graph is {graph.shape}, expected ({n}, {n})")
    if hidden.shape[1] != n:
        raise ShapeError(f"hidden has {hidden.shape[1]} columns, expected {n}")
    z = hidden
    preacts = []
    for layer in layers:
        pre = layer.weight @ x + z @ graph + layer.bias[:, None]
        preacts.append(pre)
        z = activate(activation, pre)
    return z, IntraCache(preacts=preacts)


def intra_task_gnn_backward(
    layers: list[IntraLayer],
    activation: str,
    x: np.ndarray,
    graph: np.ndarray,
    cache: IntraCache,
    d_out: np.ndarray,
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Returns (d_weights, d_biases, d_hidden); the graph is held constant."""
    d_weights = [None] * len(layers)
    d_biases = [None] * len(layers)
    dz = d_out
    for idx in range(len(layers) - 1, -1, -1):
        ds = dz * activation_deriv(activation, cache.preacts[idx])
        d_weights[idx] = ds @ x.T
        d_biases[idx] = ds.sum(axis=1)
        dz = ds @ graph.T
    return d_weights, d_biases, dz


def pool_task_embedding(hidden_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise max over all samples; also returns the argmax columns."""
    return colwise_max(hidden_out), colwise_argmax(hidden_out)


def pool_class_embedding(
    hidden_out: np.ndarray, labels: np.ndarray, cls: int
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise max over the samples of one class.

    Returns (embedding, absolute column index of the max per dimension).
    """
    cols = np.flatnonzero(np.asarray(labels) == cls)
    if cols.size == 0:
        raise MissingClassError(f"class {cls} has no samples in the pooled set")
    sub = hidden_out[:, cols]
    rel = sub.argmax(axis=1)
    emb = sub[np.arange(sub.shape[0]), rel]
    return emb, cols[rel]


@dataclass
class AttentionCache:
    nodes: np.ndarray
    transformed: np.ndarray  # W @ nodes
    safe_norms: np.ndarray  # column norms, 1.0 where guarded
    active: np.ndarray  # bool per node, False when the transformed norm ~ 0
    normalized: np.ndarray  # unit columns (0 where guarded)
    scores: np.ndarray  # cosine scores, guarded pairs forced to 0
    attention: np.ndarray  # row-softmax of scores
    combined: np.ndarray  # pre-activation of the output


def cosine_attention_layer(
    weight: np.ndarray, activation: str, nodes: np.ndarray
) -> tuple[np.ndarray, np.ndarray, AttentionCache]:
    """Single attention layer over a fully-connected node set.

    Scores are cosine similarities of the transformed nodes, softmaxed per
    row; each output node is act(sum_j alpha_ij W n_j). Transformed nodes
    with near-zero norm get score 0 against everything (cosine undefined).
    """
    nodes = np.asarray(nodes)
    if nodes.ndim != 2 or nodes.shape[1] < 1:
        raise ShapeError("cosine_attention_layer expects at least one node column")
    if nodes.shape[0] != weight.shape[1]:
        raise ShapeError(f"weight {weight.shape} cannot consume nodes of dim {nodes.shape[0]}")
    z = weight @ nodes
    norms = np.sqrt((z * z).sum(axis=0))
    active = norms >= ZERO_NORM_GUARD
    safe_norms = np.where(active, norms, 1.0)
    zn = z / safe_norms[None, :]
    zn[:, ~active] = 0.0
    scores = np.clip(zn.T @ zn, -1.0, 1.0)
    scores[~active, :] = 0.0
    scores[:, ~active] = 0.0
    attention = softmax_rows(scores)
    combined = z @ attention.T
    out = activate(activation, combined)
    cache = AttentionCache(
        nodes=nodes,
        transformed=z,
        safe_norms=safe_norms,
        active=active,
        normalized=zn,
        scores=scores,
        attention=attention,
        combined=combined,
    )
    return out, attention, cache


def cosine_attention_layer_backward(
    weight: np.ndarray, activation: str, cache: AttentionCache, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode pass; returns (d_nodes, d_weight).

    Splits into the combination path (alpha held fixed) and the score path
    (cosine differentiated w.r.t. both endpoints through the softmax).
    """
    zn = cache.normalized
    att = cache.attention
    d_comb = d_out * activation_deriv(activation, cache.combined)
    dz = d_comb @ att
    d_att = d_comb.T @ cache.transformed
    row_dot = (d_att * att).sum(axis=1, keepdims=True)
    d_scores = (d_att - row_dot) * att
    d_scores[~cache.active, :] = 0.0
    d_scores[:, ~cache.active] = 0.0
    sym = d_scores + d_scores.T
    # d cos(z_i, z_j) / d z_i = (zhat_j - cos_ij * zhat_i) / ||z_i||
    lift = zn @ sym.T
    shrink = (sym * cache.scores).sum(axis=1)
    dz_scores = (lift - zn * shrink[None, :]) / cache.safe_norms[None, :]
    dz_scores[:, ~cache.active] = 0.0
    dz = dz + dz_scores
    return weight.T @ dz, dz @ cache.nodes.T


@dataclass
class AttentionStack:
    """Two attention layers; the second layer's weights act on the first's output."""

    weight1: np.ndarray  # out_dim x input_dim
    weight2: np.ndarray  # out_dim x out_dim
    activation: str = "relu"


@dataclass
class StackCache:
    layer1: AttentionCache
    layer2: AttentionCache


def attention_stack_forward(
    stack: AttentionStack, nodes: np.ndarray
) -> tuple[np.ndarray, np.ndarray, StackCache]:
    """Returns (updated nodes, second-layer attention, cache)."""
    mid, _, c1 = cosine_attention_layer(stack.weight1, stack.activation, nodes)
    out, attention, c2 = cosine_attention_layer(stack.weight2, stack.activation, mid)
    return out, attention, StackCache(layer1=c1, layer2=c2)


def attention_stack_backward(
    stack: AttentionStack, cache: StackCache, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d_nodes, d_weight1, d_weight2)."""
    d_mid, d_w2 = cosine_attention_layer_backward(stack.weight2, stack.activation, cache.layer2, d_out)
    d_nodes, d_w1 = cosine_attention_layer_backward(stack.weight1, stack.activation, cache.layer1, d_mid)
    return d_nodes, d_w1, d_w2


def augment(
    sample_repr: np.ndarray,
    task_embedding: Optional[np.ndarray] = None,
    class_embedding: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Concatenate (sample representation, task embedding, class embedding).

    Parts are optional but keep this fixed order; all parts must be 1-d.
    """
    parts = [sample_repr]
    if task_embedding is not None:
        parts.append(task_embedding)
    if class_embedding is not None:
        parts.append(class_embedding)
    for part in parts:
        if np.asarray(part).ndim != 1:
            raise ShapeError("augment expects 1-d vectors")
    return np.concatenate(parts)


@dataclass
class EmbeddingSet:
    """Raw (pooled) and attention-updated embeddings plus attention matrices.

    Class node order is task-major: node index (i, j) = (i-1)*k + (j-1).
    Attention matrices come from the second stack layer.
    """

    raw_task: np.ndarray  # hidden_dim x m
    updated_task: Optional[np.ndarray]  # task_emb_dim x m
    task_attention: Optional[np.ndarray]  # m x m
    raw_class: Optional[np.ndarray] = None  # hidden_dim x (m*k)
    updated_class: Optional[np.ndarray] = None  # class_emb_dim x (m*k)
    class_attention: Optional[np.ndarray] = None  # (m*k) x (m*k)
    class_from_cache: Optional[np.ndarray] = None  # bool (m*k), True = stale reuse

    def class_node(self, task_index: int, cls: int, num_classes: int) -> int:
        """Flat node index for 0-based task_index and 1-based class id."""
        return task_index * num_classes + (cls - 1)

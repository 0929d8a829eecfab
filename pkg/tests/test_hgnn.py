import math

import numpy as np
import pytest

from hgnn_mtl.errors import MissingClassError, ShapeError
from hgnn_mtl.hgnn import (
    AttentionStack,
    IntraLayer,
    SharedTransform,
    attention_stack_backward,
    attention_stack_forward,
    augment,
    cosine_attention_layer,
    cosine_attention_layer_backward,
    intra_task_gnn,
    intra_task_gnn_backward,
    pool_class_embedding,
    pool_task_embedding,
    shared_transform,
    shared_transform_backward,
)
from hgnn_mtl.numerics import make_rng


def test_shared_transform_examples():
    st = SharedTransform(weight=np.eye(2), bias=np.zeros(2))
    out, _ = shared_transform(st, np.array([[1.0], [-1.0]]))
    assert np.array_equal(out, np.array([[1.0], [0.0]]))

    st = SharedTransform(weight=np.eye(2), bias=np.array([0.5, -0.5]))
    out, _ = shared_transform(st, np.zeros((2, 1)))
    assert np.array_equal(out, np.array([[0.5], [0.0]]))

    st = SharedTransform(weight=np.array([[1.0, 1.0], [0.0, 2.0]]), bias=np.array([-1.0, 0.0]))
    out, _ = shared_transform(st, np.array([[1.0], [1.0]]))
    assert np.array_equal(out, np.array([[1.0], [2.0]]))


def test_shared_transform_shape_error():
    st = SharedTransform(weight=np.eye(2), bias=np.zeros(2))
    with pytest.raises(ShapeError):
        shared_transform(st, np.zeros((3, 1)))


def test_intra_gnn_identity_graph():
    rng = make_rng(0)
    x = rng.normal(size=(3, 4))
    hidden = rng.normal(size=(2, 4))
    layers = [IntraLayer(weight=np.zeros((2, 3)), bias=np.zeros(2))]
    out, _ = intra_task_gnn(layers, "relu", x, hidden, np.eye(4))
    assert np.array_equal(out, np.maximum(hidden, 0))
    # identity activation with zero weights is the identity map on hidden
    out_id, _ = intra_task_gnn(layers, "identity", x, hidden, np.eye(4))
    assert np.array_equal(out_id, hidden)


def test_intra_gnn_single_node():
    x = np.array([[2.0]])
    hidden = np.array([[-3.0], [4.0]])
    layers = [IntraLayer(weight=np.zeros((2, 1)), bias=np.zeros(2))]
    out, _ = intra_task_gnn(layers, "relu", x, hidden, np.array([[1.0]]))
    assert np.array_equal(out, np.array([[0.0], [4.0]]))


def test_intra_gnn_negative_cross_terms_clipped():
    x = np.zeros((1, 2))
    hidden = np.eye(2)
    g = np.array([[1.0, -0.5], [-0.5, 1.0]])
    layers = [IntraLayer(weight=np.zeros((2, 1)), bias=np.zeros(2))]
    out, _ = intra_task_gnn(layers, "relu", x, hidden, g)
    assert np.array_equal(out, np.eye(2))


def test_pooling_examples():
    h = np.array([[1.0, 3.0], [2.0, 0.0]])
    emb, arg = pool_task_embedding(h)
    assert np.array_equal(emb, np.array([3.0, 2.0]))
    assert np.array_equal(arg, np.array([1, 0]))
    perm_emb, _ = pool_task_embedding(h[:, ::-1])
    assert np.array_equal(emb, perm_emb)
    single, _ = pool_task_embedding(np.array([[5.0], [6.0]]))
    assert np.array_equal(single, np.array([5.0, 6.0]))


def test_class_pooling():
    h = np.array([[1.0, 0.0, 7.0], [0.0, 1.0, 7.0]])
    labels = np.array([1, 1, 2])
    emb, cols = pool_class_embedding(h, labels, 1)
    assert np.array_equal(emb, np.array([1.0, 1.0]))
    assert np.array_equal(cols, np.array([0, 1]))
    single, _ = pool_class_embedding(h, labels, 2)
    assert np.array_equal(single, np.array([7.0, 7.0]))
    with pytest.raises(MissingClassError):
        pool_class_embedding(h, labels, 3)


def test_attention_single_node():
    w = np.array([[2.0, 0.0], [0.0, 1.0]])
    nodes = np.array([[1.0], [-2.0]])
    out, att, _ = cosine_attention_layer(w, "relu", nodes)
    assert np.array_equal(att, np.array([[1.0]]))
    assert np.array_equal(out, np.maximum(w @ nodes, 0))


def test_attention_equal_nodes():
    w = np.array([[1.0, 0.5]])
    nodes = np.tile(np.array([[1.0], [2.0]]), (1, 2))
    out, att, _ = cosine_attention_layer(w, "relu", nodes)
    assert np.abs(att - 0.5).max() < 1e-12
    assert np.array_equal(out[:, 0], out[:, 1])


def test_attention_orthogonal_nodes():
    w = np.eye(2)
    nodes = np.array([[1.0, 0.0], [0.0, 1.0]])
    _, att, cache = cosine_attention_layer(w, "relu", nodes)
    e = math.e
    assert np.array_equal(cache.scores, np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert abs(att[0, 0] - e / (e + 1)) < 1e-12
    assert abs(att[0, 0] - 0.7310585786300049) < 1e-12


def test_attention_zero_norm_guard():
    w = np.array([[1.0, 0.0]])  # second node maps to 0
    nodes = np.array([[1.0, 0.0], [0.0, 5.0]])
    _, att, cache = cosine_attention_layer(w, "relu", nodes)
    assert not cache.active[1]
    assert np.array_equal(cache.scores[:, 1], np.zeros(2))
    assert np.array_equal(cache.scores[1, :], np.zeros(2))
    assert np.abs(att.sum(axis=1) - 1.0).max() < 1e-12


def test_attention_scale_invariance_of_scores():
    rng = make_rng(1)
    w = rng.normal(size=(3, 4))
    nodes = rng.normal(size=(4, 5))
    _, _, cache = cosine_attention_layer(w, "relu", nodes)
    scaled = nodes.copy()
    scaled[:, 2] *= 7.5
    _, _, cache2 = cosine_attention_layer(w, "relu", scaled)
    assert np.abs(cache.scores[2, :] - cache2.scores[2, :]).max() < 1e-9
    assert np.all(cache.scores >= -1.0) and np.all(cache.scores <= 1.0)
    assert np.abs(np.diag(cache.scores) - 1.0).max() < 1e-12


def test_attention_rows_sum_to_one():
    rng = make_rng(2)
    w = rng.normal(size=(4, 6))
    nodes = rng.normal(size=(6, 9))
    _, att, _ = cosine_attention_layer(w, "relu", nodes)
    assert np.abs(att.sum(axis=1) - 1.0).max() < 1e-8
    assert np.all(att >= 0)


def test_stack_single_node_composition():
    rng = make_rng(3)
    stack = AttentionStack(weight1=rng.normal(size=(3, 4)), weight2=rng.normal(size=(3, 3)))
    node = rng.normal(size=(4, 1))
    out, att, _ = attention_stack_forward(stack, node)
    expected = np.maximum(stack.weight2 @ np.maximum(stack.weight1 @ node, 0), 0)
    assert np.abs(out - expected).max() < 1e-12
    assert np.array_equal(att, np.array([[1.0]]))


def test_stack_identical_nodes_stay_identical():
    rng = make_rng(4)
    stack = AttentionStack(weight1=rng.normal(size=(2, 3)), weight2=rng.normal(size=(2, 2)))
    nodes = np.tile(rng.normal(size=(3, 1)), (1, 4))
    out, att, _ = attention_stack_forward(stack, nodes)
    assert np.abs(out - out[:, [0]]).max() < 1e-12
    assert np.abs(att.sum(axis=1) - 1.0).max() < 1e-8


def test_augment_order_and_shapes():
    assert np.array_equal(
        augment(np.array([1.0, 2.0]), np.array([3.0]), np.array([4.0])),
        np.array([1.0, 2.0, 3.0, 4.0]),
    )
    assert np.array_equal(
        augment(np.array([1.0, 2.0]), np.zeros(2), np.zeros(2)),
        np.array([1.0, 2.0, 0.0, 0.0, 0.0, 0.0]),
    )
    # task-only augmentation (continuous-label mode)
    assert np.array_equal(augment(np.array([1.0]), np.array([2.0])), np.array([1.0, 2.0]))
    with pytest.raises(ShapeError):
        augment(np.zeros((2, 2)))


def _fd_grad(f, arr, eps=1e-7):
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        hi = f()
        flat[j] = orig - eps
        lo = f()
        flat[j] = orig
        gf[j] = (hi - lo) / (2 * eps)
    return g


def test_attention_layer_backward_matches_fd():
    rng = make_rng(5)
    w = rng.normal(size=(3, 4))
    nodes = rng.normal(size=(4, 5))
    dmix = rng.normal(size=(3, 5))

    def loss():
        out, _, _ = cosine_attention_layer(w, "identity", nodes)
        return float((out * dmix).sum())

    out, _, cache = cosine_attention_layer(w, "identity", nodes)
    d_nodes, d_w = cosine_attention_layer_backward(w, "identity", cache, dmix)
    assert np.abs(d_w - _fd_grad(loss, w)).max() < 1e-6
    assert np.abs(d_nodes - _fd_grad(loss, nodes)).max() < 1e-6


def test_stack_backward_matches_fd():
    rng = make_rng(6)
    stack = AttentionStack(
        weight1=rng.normal(size=(3, 4)), weight2=rng.normal(size=(3, 3)), activation="identity"
    )
    nodes = rng.normal(size=(4, 6))
    dmix = rng.normal(size=(3, 6))

    def loss():
        out, _, _ = attention_stack_forward(stack, nodes)
        return float((out * dmix).sum())

    _, _, cache = attention_stack_forward(stack, nodes)
    d_nodes, d_w1, d_w2 = attention_stack_backward(stack, cache, dmix)
    assert np.abs(d_w1 - _fd_grad(loss, stack.weight1)).max() < 1e-6
    assert np.abs(d_w2 - _fd_grad(loss, stack.weight2)).max() < 1e-6
    assert np.abs(d_nodes - _fd_grad(loss, nodes)).max() < 1e-6


def test_intra_backward_matches_fd():
    rng = make_rng(7)
    x = rng.normal(size=(3, 5))
    hidden = rng.normal(size=(2, 5))
    g = rng.normal(size=(5, 5))
    layers = [
        IntraLayer(weight=rng.normal(size=(2, 3)), bias=rng.normal(size=2)) for _ in range(2)
    ]
    dmix = rng.normal(size=(2, 5))

    def loss():
        out, _ = intra_task_gnn(layers, "identity", x, hidden, g)
        return float((out * dmix).sum())

    _, cache = intra_task_gnn(layers, "identity", x, hidden, g)
    d_ws, d_bs, d_hidden = intra_task_gnn_backward(layers, "identity", x, g, cache, dmix)
    for l in range(2):
        assert np.abs(d_ws[l] - _fd_grad(loss, layers[l].weight)).max() < 1e-6
        assert np.abs(d_bs[l] - _fd_grad(loss, layers[l].bias)).max() < 1e-6
    assert np.abs(d_hidden - _fd_grad(loss, hidden)).max() < 1e-6


def test_shared_backward_matches_fd():
    rng = make_rng(8)
    st = SharedTransform(weight=rng.normal(size=(3, 4)), bias=rng.normal(size=3), activation="identity")
    x = rng.normal(size=(4, 6))
    dmix = rng.normal(size=(3, 6))

    def loss():
        out, _ = shared_transform(st, x)
        return float((out * dmix).sum())

    _, pre = shared_transform(st, x)
    d_w, d_b = shared_transform_backward(st, x, pre, dmix)
    assert np.abs(d_w - _fd_grad(loss, st.weight)).max() < 1e-6
    assert np.abs(d_b - _fd_grad(loss, st.bias)).max() < 1e-6

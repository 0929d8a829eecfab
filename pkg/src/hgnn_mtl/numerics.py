"""Dense matrix/vector primitives and seeded randomness.

Matrices are 2-d numpy arrays (row-major), vectors are 1-d arrays.
Operations here validate shapes and refuse to propagate NaN/Inf.
Randomness goes through PCG64 generators derived from explicit integer
seeds; there is no global RNG state anywhere in the package.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError, UsageError

DEFAULT_DTYPE = np.float64


def ensure_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} produced non-finite values")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape validation."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return ensure_finite("matmul", a @ b)


def relu(m: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(m), 0)


def softmax_vector(v: np.ndarray) -> np.ndarray:
    """Stable softmax of a 1-d vector (max-subtracted)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise UsageError("softmax_vector expects a non-empty 1-d vector")
    ensure_finite("softmax_vector input", v)
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax of a 2-d matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise UsageError("softmax_rows expects a non-empty 2-d matrix")
    ensure_finite("softmax_rows input", m)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def colwise_max(m: np.ndarray) -> np.ndarray:
    """Elementwise maximum across columns: one value per row."""
    m = np.asarray(m)
    if m.ndim != 2 or m.size == 0:
        raise ShapeError("colwise_max expects a non-empty 2-d matrix")
    return m.max(axis=1)


def colwise_argmax(m: np.ndarray) -> np.ndarray:
    """Column index of the per-row maximum; ties resolve to the first column."""
    m = np.asarray(m)
    if m.ndim != 2 or m.size == 0:
        raise ShapeError("colwise_argmax expects a non-empty 2-d matrix")
    return m.argmax(axis=1)


def sq_l2_distance(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"sq_l2_distance expects equal-length vectors, got {u.shape} and {v.shape}")
    d = u - v
    return float(d @ d)


def pairwise_sq_dists(columns: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between all column pairs.

    Computed from explicit differences so the result is exactly symmetric
    with an exactly-zero diagonal (no cancellation through norm identities).
    """
    columns = np.asarray(columns)
    if columns.ndim != 2 or columns.size == 0:
        raise ShapeError("pairwise_sq_dists expects a non-empty 2-d matrix of column vectors")
    diff = columns[:, :, None] - columns[:, None, :]
    return ensure_finite("pairwise_sq_dists", np.einsum("dij,dij->ij", diff, diff))


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64) for a 64-bit unsigned seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 stream keyed by (seed, *key).

    Streams with distinct keys are statistically independent and each is a
    pure function of its key, so concurrent workers can own disjoint streams.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))

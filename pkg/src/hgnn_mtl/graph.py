"""Per-task sample-similarity graphs.

Entries are Gaussian similarities exp(-||h_j - h_l||^2) between hidden
representations. For classification the sign encodes label agreement
(+ same class, - different class); for regression all entries are positive.
Matrices are dense, exactly symmetric, rebuilt from the current hidden
representations on every forward pass, and treated as constants during
differentiation.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .numerics import pairwise_sq_dists


def _row_normalize(g: np.ndarray) -> np.ndarray:
    # Degree normalization by absolute row sums; changes the aggregation
    # semantics, so it is opt-in and off by default.
    return g / np.abs(g).sum(axis=1, keepdims=True)


def build_classification_adjacency(
    hidden: np.ndarray, labels: np.ndarray, row_normalize: bool = False
) -> np.ndarray:
    """Signed similarity matrix over the columns of `hidden`.

    g[j,l] = exp(-||h_j - h_l||^2) when labels agree, negated otherwise.
    The diagonal is exactly +1.
    """
    hidden = np.asarray(hidden)
    labels = np.asarray(labels)
    if hidden.ndim != 2 or hidden.shape[1] != len(labels):
        raise ShapeError(
            f"hidden has {hidden.shape} columns but {len(labels)} labels were given"
        )
    sim = np.exp(-pairwise_sq_dists(hidden))
    sign = np.where(labels[:, None] == labels[None, :], 1.0, -1.0)
    g = sim * sign
    return _row_normalize(g) if row_normalize else g


def build_regression_adjacency(hidden: np.ndarray, row_normalize: bool = False) -> np.ndarray:
    """All-positive similarity matrix for continuous-label tasks."""
    hidden = np.asarray(hidden)
    if hidden.ndim != 2 or hidden.size == 0:
        raise ShapeError("build_regression_adjacency expects a non-empty 2-d matrix")
    g = np.exp(-pairwise_sq_dists(hidden))
    return _row_normalize(g) if row_normalize else g

"""Soft attention over an image's local regions.

Each region i of the current image gets a score through a small MLP of
the region features and the previous hidden state; the softmax of the
scores weights the regions into a single context vector. Attention is
scoped to one image: a branch never attends across images.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .numerics import as_matrix, as_vector, softmax
from .params import AttentionParams


def attention_scores(local_feats: np.ndarray, h_prev: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Normalized attention weights over the M regions, shape (M,).

    weights = softmax over i of score_w @ tanh(local_w @ L_i + state_w @ h_prev + bias)
    """
    feats = as_matrix(local_feats, "local features")
    h = as_vector(h_prev, "hidden state")
    if feats.shape[0] < 1:
        raise ShapeError("local feature matrix must have at least one region row")
    if feats.shape[1] != params.local_w.shape[1]:
        raise ShapeError(
            f"local features shape {feats.shape} incompatible with "
            f"attention weight shape {params.local_w.shape}"
        )
    if h.shape[0] != params.state_w.shape[1]:
        raise ShapeError(
            f"hidden state shape {h.shape} incompatible with "
            f"attention weight shape {params.state_w.shape}"
        )
    pre = np.tanh(feats @ params.local_w.T + (params.state_w @ h + params.bias))
    scores = pre @ params.score_w[0]
    return softmax(scores)


def context_vector(local_feats: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Convex combination of the region rows, shape (local_dim,)."""
    feats = as_matrix(local_feats, "local features")
    k = as_vector(weights, "attention weights")
    if k.shape[0] != feats.shape[0]:
        raise ShapeError(
            f"attention weights shape {k.shape} incompatible with "
            f"local features shape {feats.shape}"
        )
    return k @ feats


def attend(local_feats: np.ndarray, h_prev: np.ndarray, params: AttentionParams):
    """One attention step: (weights, context vector)."""
    k = attention_scores(local_feats, h_prev, params)
    return k, context_vector(local_feats, k)

"""Global-context encoder: map the global feature vector to h0.

h0 = out_w @ tanh(mid_w @ G + mid_b)

The same h0 seeds the hidden state of every decoder branch; the cell
state always starts at zero.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .numerics import affine, as_vector, tanh_act
from .params import EncoderParams


def embed_global(global_vec: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Initial hidden state from the global features, shape (hidden_dim,)."""
    g = as_vector(global_vec, "global features")
    mid = tanh_act(affine(params.mid_w, g, params.mid_b))
    return np.dot(params.out_w, mid)


def embed_global_batch(global_vecs: np.ndarray, params: EncoderParams):
    """Batched h0 for a (B, global_dim) stack; also returns the tanh layer.

    The tanh activations are the cache the backward pass needs.
    """
    g = np.asarray(global_vecs, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != params.mid_w.shape[1]:
        raise ShapeError(
            f"global feature batch shape {g.shape} incompatible with "
            f"encoder weight shape {params.mid_w.shape}"
        )
    mid = np.tanh(g @ params.mid_w.T + params.mid_b)
    return mid @ params.out_w.T, mid

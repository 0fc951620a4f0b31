"""Dense linear algebra and activation kernels.

Everything runs in 64-bit floats on plain numpy arrays: a "vector" is a
1-D float64 array, a "matrix" is a 2-D float64 array (row-major, as numpy
stores them). All functions are pure and deterministic, which keeps
training traces bit-reproducible and finite-difference gradient checks
meaningful.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

Array = np.ndarray


def as_vector(x, name: str = "vector") -> Array:
    """Coerce to a 1-D float64 array, rejecting anything else."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {a.shape}")
    return a


def as_matrix(x, name: str = "matrix") -> Array:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def check_finite(a: Array, name: str = "array") -> Array:
    """Raise if any entry is NaN or infinite; NaN/Inf is an error state."""
    if not np.isfinite(a).all():
        raise ShapeError(f"{name} contains non-finite entries")
    return a


def affine(w: Array, x: Array, b: Array) -> Array:
    """Compute w @ x + b with explicit shape validation.

    Args:
        w: weight matrix, shape (rows, cols)
        x: input vector, shape (cols,)
        b: bias vector, shape (rows,)
    Returns:
        Output vector of shape (rows,).
    """
    w = as_matrix(w, "weight")
    x = as_vector(x, "input")
    b = as_vector(b, "bias")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(
            f"weight shape {w.shape} incompatible with input shape {x.shape}"
        )
    if w.shape[0] != b.shape[0]:
        raise ShapeError(
            f"weight shape {w.shape} incompatible with bias shape {b.shape}"
        )
    return np.dot(w, x) + b


def sigmoid(x: Array) -> Array:
    """Elementwise logistic function 1 / (1 + exp(-x)).

    Saturates cleanly at the float64 boundaries and never produces NaN
    for finite input.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh_act(x: Array) -> Array:
    """Elementwise hyperbolic tangent."""
    return np.tanh(np.asarray(x, dtype=np.float64))


def sigmoid_grad(y: Array) -> Array:
    """Derivative of sigmoid w.r.t. its pre-activation, given the output y."""
    return y * (1.0 - y)


def tanh_grad(y: Array) -> Array:
    """Derivative of tanh w.r.t. its pre-activation, given the output y."""
    return 1.0 - y * y


def softmax(x: Array) -> Array:
    """Numerically safe softmax of a 1-D vector.

    Subtracts the maximum before exponentiation, so the result is
    invariant under adding a constant to every input and never overflows.

    Raises:
        ShapeError: if the input is empty.
    """
    x = as_vector(x, "softmax input")
    if x.shape[0] == 0:
        raise ShapeError("softmax input must have at least one element")
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / np.sum(e)


def log_softmax(x: Array) -> Array:
    """log(softmax(x)) computed without forming small intermediate products."""
    x = as_vector(x, "log_softmax input")
    if x.shape[0] == 0:
        raise ShapeError("log_softmax input must have at least one element")
    shifted = x - np.max(x)
    return shifted - np.log(np.sum(np.exp(shifted)))


def softmax_rows(x: Array) -> Array:
    """Row-wise softmax of a 2-D array (batched variant of softmax)."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax_rows(x: Array) -> Array:
    """Row-wise log-softmax of a 2-D array."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))

"""Likelihood training: loss, exact gradients, optimizers, checkpoints.

The loss is the per-token mean negative log-likelihood of the batch,
so learning rates transfer across corpus shapes. Gradients come from
the hand-derived backward pass in backprop.py and are validated against
central finite differences by grad_check.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import backprop
from .backprop import Batch
from .corpus import EOS
from .errors import ConfigError, DataFormatError, ShapeError
from .features import SequenceFeatures
from .params import (
    Gradients,
    ModelDims,
    ModelParams,
    init_params,
    params_from_arrays,
    tensor_shapes,
    zeros_like_params,
    zip_map_params,
)

CKPT_MAGIC = b"SLTM"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sI")
_CKPT_DIMS = struct.Struct("<9I")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters (the paper reports none; these are
    the artifact's defaults)."""

    learning_rate: float = 1e-3
    iterations: int = 100
    grad_clip: float | None = None
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_scale: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive when set, got {self.grad_clip}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.init_scale <= 0:
            raise ConfigError(f"init_scale must be positive, got {self.init_scale}")


def loss(batch: Batch, params: ModelParams, use_global_context: bool = True) -> float:
    """Per-token mean negative log-likelihood of the batch, >= 0."""
    cache = backprop.forward_batch(batch, params, use_global_context, with_cache=False)
    return -cache.total_logprob / cache.total_tokens


def gradients(batch: Batch, params: ModelParams, use_global_context: bool = True) -> Gradients:
    """Exact gradient of loss() w.r.t. every parameter tensor."""
    cache = backprop.forward_batch(batch, params, use_global_context, with_cache=True)
    grads = backprop.backward_batch(
        cache, params, scale=1.0 / cache.total_tokens, use_global_context=use_global_context
    )
    for name, g in grads.tensors():
        if not np.isfinite(g).all():
            raise ShapeError(f"gradient {name} contains non-finite entries")
    return grads


def loss_and_gradients(
    batch: Batch, params: ModelParams, use_global_context: bool = True
) -> tuple[float, Gradients]:
    """One forward pass serving both the loss value and its gradient."""
    cache = backprop.forward_batch(batch, params, use_global_context, with_cache=True)
    grads = backprop.backward_batch(
        cache, params, scale=1.0 / cache.total_tokens, use_global_context=use_global_context
    )
    return -cache.total_logprob / cache.total_tokens, grads


@dataclass
class OptState:
    """Optimizer state; m/v are Adam's moment estimates."""

    step_count: int = 0
    m: ModelParams | None = None
    v: ModelParams | None = None

    @classmethod
    def initial(cls, params: ModelParams, config: TrainConfig) -> "OptState":
        if config.optimizer == "adam":
            return cls(0, zeros_like_params(params), zeros_like_params(params))
        return cls(0, None, None)


def global_norm(grads: Gradients) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for _, g in grads.tensors())))


def step(
    params: ModelParams,
    grads: Gradients,
    config: TrainConfig,
    opt_state: OptState,
) -> tuple[ModelParams, OptState]:
    """One optimizer update; returns fresh containers, inputs untouched."""
    if config.grad_clip is not None:
        norm = global_norm(grads)
        if norm > config.grad_clip:
            factor = config.grad_clip / norm
            grads = zip_map_params(lambda g: g * factor, grads)

    lr = config.learning_rate
    if config.optimizer == "sgd":
        new_params = zip_map_params(lambda p, g: p - lr * g, params, grads)
        return new_params, OptState(opt_state.step_count + 1, None, None)

    t = opt_state.step_count + 1
    b1, b2, eps = config.beta1, config.beta2, config.eps
    m = zip_map_params(lambda m_, g: b1 * m_ + (1 - b1) * g, opt_state.m, grads)
    v = zip_map_params(lambda v_, g: b2 * v_ + (1 - b2) * g * g, opt_state.v, grads)
    bc1 = 1 - b1**t
    bc2 = 1 - b2**t
    new_params = zip_map_params(
        lambda p, m_, v_: p - lr * (m_ / bc1) / (np.sqrt(v_ / bc2) + eps),
        params,
        m,
        v,
    )
    return new_params, OptState(t, m, v)


def train(
    batch: Batch,
    params: ModelParams,
    config: TrainConfig,
    use_global_context: bool = True,
    freeze_encoder: bool = False,
    progress: Callable[[int, float], None] | None = None,
) -> tuple[ModelParams, list[float]]:
    """Full-batch training for config.iterations steps.

    Returns the final parameters and the loss recorded before each
    update (the loss trace). freeze_encoder zeroes the global-context
    MLP's gradients, which together with a zero-initialized encoder
    realizes the h0=0 ablation.
    """
    opt_state = OptState.initial(params, config)
    history: list[float] = []
    for it in range(config.iterations):
        value, grads = loss_and_gradients(batch, params, use_global_context)
        history.append(value)
        if freeze_encoder:
            grads.encoder.mid_w[:] = 0.0
            grads.encoder.mid_b[:] = 0.0
            grads.encoder.out_w[:] = 0.0
        params, opt_state = step(params, grads, config, opt_state)
        if progress is not None:
            progress(it, value)
    return params, history


GRADCHECK_DIMS = ModelDims(
    global_dim=6,
    local_dim=4,
    num_regions=3,
    hidden_dim=4,
    embed_dim=4,
    vocab_size=7,
    num_sentences=2,
    mlp_dim=4,
    attn_dim=4,
)


def random_batch(dims: ModelDims, rng: np.random.Generator, num_stories: int = 3) -> Batch:
    """Random features and random eos-terminated sentences for checks."""
    batch: Batch = []
    for _ in range(num_stories):
        feats = SequenceFeatures(
            global_vec=rng.normal(size=dims.global_dim),
            locals=rng.normal(size=(dims.num_sentences, dims.num_regions, dims.local_dim)),
        )
        story = []
        for _ in range(dims.num_sentences):
            length = int(rng.integers(1, 5))
            ids = rng.integers(4, dims.vocab_size, size=length).tolist() + [EOS]
            story.append(np.asarray(ids, dtype=np.int64))
        batch.append((feats, story))
    return batch


def grad_check(
    dims: ModelDims = GRADCHECK_DIMS,
    seed: int = 0,
    num_stories: int = 3,
    epsilon: float = 1e-5,
    max_coords_per_tensor: int = 2000,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Builds a seeded random model and batch, then compares
    coordinate-by-coordinate on up to max_coords_per_tensor uniformly
    sampled coordinates per tensor. Relative error is
    |ga - gn| / max(|ga|, |gn|, 1e-8).

    The check model uses unit init scale: near the origin the attention
    softmax backward cancels almost exactly over regions, leaving true
    gradients around 1e-8 that central differences at this epsilon
    cannot resolve; more curvature keeps the comparison meaningful.
    """
    rng = np.random.default_rng(seed)
    params = init_params(dims, seed=seed, init_scale=1.0)
    batch = random_batch(dims, rng, num_stories)
    analytic = gradients(batch, params)

    worst = 0.0
    for (_, tensor), (_, grad) in zip(params.tensors(), analytic.tensors()):
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        n = flat.shape[0]
        if n <= max_coords_per_tensor:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        for c in coords:
            original = flat[c]
            flat[c] = original + epsilon
            up = loss(batch, params)
            flat[c] = original - epsilon
            down = loss(batch, params)
            flat[c] = original
            numeric = (up - down) / (2 * epsilon)
            ga = gflat[c]
            rel = abs(ga - numeric) / max(abs(ga), abs(numeric), 1e-8)
            if rel > worst:
                worst = rel
    return worst


def save_checkpoint(params: ModelParams, dims: ModelDims, path) -> None:
    """Write magic, version, the u32 dimension block, then all tensors
    as little-endian float64 in the fixed tensors() order."""
    dims_block = _CKPT_DIMS.pack(
        dims.global_dim,
        dims.local_dim,
        dims.num_regions,
        dims.hidden_dim,
        dims.embed_dim,
        dims.vocab_size,
        dims.num_sentences,
        dims.mlp_dim,
        dims.attn_dim,
    )
    try:
        with open(path, "wb") as fh:
            fh.write(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION))
            fh.write(dims_block)
            for _, tensor in params.tensors():
                fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    except OSError as exc:
        raise DataFormatError(f"cannot write checkpoint to {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[ModelParams, ModelDims]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read checkpoint from {path}: {exc}") from exc
    head = _CKPT_HEADER.size
    if len(raw) < head + _CKPT_DIMS.size:
        raise DataFormatError(f"{path}: short read, checkpoint header truncated")
    magic, version = _CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    if version != CKPT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    fields = _CKPT_DIMS.unpack_from(raw, head)
    try:
        dims = ModelDims(
            global_dim=fields[0],
            local_dim=fields[1],
            num_regions=fields[2],
            hidden_dim=fields[3],
            embed_dim=fields[4],
            vocab_size=fields[5],
            num_sentences=fields[6],
            mlp_dim=fields[7],
            attn_dim=fields[8],
        )
    except ConfigError as exc:
        raise DataFormatError(f"{path}: invalid dimension block: {exc}") from exc
    shapes = tensor_shapes(dims)
    total = sum(int(np.prod(s)) for _, s in shapes)
    expected = head + _CKPT_DIMS.size + 8 * total
    if len(raw) < expected:
        raise DataFormatError(f"{path}: short read, {len(raw)} bytes but {expected} expected")
    if len(raw) > expected:
        raise DataFormatError(f"{path}: trailing data, {len(raw)} bytes but {expected} expected")
    flat = np.frombuffer(raw, dtype="<f8", offset=head + _CKPT_DIMS.size)
    arrays = []
    offset = 0
    for _, shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[offset : offset + size].reshape(shape).copy())
        offset += size
    params = params_from_arrays(arrays, dims)
    for name, tensor in params.tensors():
        if not np.isfinite(tensor).all():
            raise DataFormatError(f"{path}: tensor {name} contains non-finite entries")
    return params, dims

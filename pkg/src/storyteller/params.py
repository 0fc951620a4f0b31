"""Trainable parameter containers and their initialization.

The tensor ordering in ModelParams.tensors() is load-bearing: the
checkpoint format serializes tensors in exactly this order.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ModelDims:
    """Every structural dimension of the model.

    global_dim/local_dim/num_regions describe the incoming features,
    hidden_dim the LSTM state, embed_dim the word embeddings, mlp_dim
    the width of the global-context MLP, attn_dim the width of the
    attention scorer.
    """

    global_dim: int = 4096
    local_dim: int = 512
    num_regions: int = 196
    hidden_dim: int = 512
    embed_dim: int = 512
    vocab_size: int = 10000
    num_sentences: int = 5
    mlp_dim: int = 512
    attn_dim: int = 512

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"dimension {f.name} must be a positive integer, got {v!r}")


@dataclass
class EncoderParams:
    """Global-context MLP: h0 = out_w @ tanh(mid_w @ G + mid_b)."""

    mid_w: np.ndarray  # (mlp_dim, global_dim)
    mid_b: np.ndarray  # (mlp_dim,)
    out_w: np.ndarray  # (hidden_dim, mlp_dim)


@dataclass
class AttentionParams:
    """Region scorer: score_i = score_w @ tanh(local_w @ L_i + state_w @ h + bias)."""

    local_w: np.ndarray  # (attn_dim, local_dim)
    state_w: np.ndarray  # (attn_dim, hidden_dim)
    bias: np.ndarray     # (attn_dim,)
    score_w: np.ndarray  # (1, attn_dim)


@dataclass
class GateParams:
    """One LSTM gate's maps from word input, hidden state, and visual context."""

    w_x: np.ndarray  # (hidden_dim, embed_dim)
    w_h: np.ndarray  # (hidden_dim, hidden_dim)
    w_v: np.ndarray  # (hidden_dim, local_dim)
    b: np.ndarray    # (hidden_dim,)


@dataclass
class DecoderParams:
    embedding: np.ndarray  # (vocab_size, embed_dim)
    gate_i: GateParams
    gate_f: GateParams
    gate_o: GateParams
    gate_q: GateParams
    out_w: np.ndarray  # (vocab_size, hidden_dim)
    out_b: np.ndarray  # (vocab_size,)

    @property
    def gates(self) -> tuple[GateParams, GateParams, GateParams, GateParams]:
        return (self.gate_i, self.gate_f, self.gate_o, self.gate_q)


@dataclass
class ModelParams:
    """All trainable tensors: encoder MLP, attention scorer, decoder LSTM."""

    encoder: EncoderParams
    attention: AttentionParams
    decoder: DecoderParams

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """(name, array) pairs in the fixed checkpoint order."""
        enc, att, dec = self.encoder, self.attention, self.decoder
        yield "encoder.mid_w", enc.mid_w
        yield "encoder.mid_b", enc.mid_b
        yield "encoder.out_w", enc.out_w
        yield "attention.local_w", att.local_w
        yield "attention.state_w", att.state_w
        yield "attention.bias", att.bias
        yield "attention.score_w", att.score_w
        yield "decoder.embedding", dec.embedding
        for gname, gate in zip("ifoq", dec.gates):
            yield f"decoder.gate_{gname}.w_x", gate.w_x
            yield f"decoder.gate_{gname}.w_h", gate.w_h
            yield f"decoder.gate_{gname}.w_v", gate.w_v
            yield f"decoder.gate_{gname}.b", gate.b
        yield "decoder.out_w", dec.out_w
        yield "decoder.out_b", dec.out_b

    def copy(self) -> "ModelParams":
        return map_params(lambda a: a.copy(), self)

    def num_parameters(self) -> int:
        return sum(a.size for _, a in self.tensors())


# A Gradients container is shape-congruent with ModelParams, so it reuses
# the same structure.
Gradients = ModelParams


def tensor_shapes(dims: ModelDims) -> list[tuple[str, tuple[int, ...]]]:
    """Expected (name, shape) pairs, in checkpoint order, for given dims."""
    d = dims
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("encoder.mid_w", (d.mlp_dim, d.global_dim)),
        ("encoder.mid_b", (d.mlp_dim,)),
        ("encoder.out_w", (d.hidden_dim, d.mlp_dim)),
        ("attention.local_w", (d.attn_dim, d.local_dim)),
        ("attention.state_w", (d.attn_dim, d.hidden_dim)),
        ("attention.bias", (d.attn_dim,)),
        ("attention.score_w", (1, d.attn_dim)),
        ("decoder.embedding", (d.vocab_size, d.embed_dim)),
    ]
    for gname in "ifoq":
        shapes += [
            (f"decoder.gate_{gname}.w_x", (d.hidden_dim, d.embed_dim)),
            (f"decoder.gate_{gname}.w_h", (d.hidden_dim, d.hidden_dim)),
            (f"decoder.gate_{gname}.w_v", (d.hidden_dim, d.local_dim)),
            (f"decoder.gate_{gname}.b", (d.hidden_dim,)),
        ]
    shapes += [
        ("decoder.out_w", (d.vocab_size, d.hidden_dim)),
        ("decoder.out_b", (d.vocab_size,)),
    ]
    return shapes


def rebuild_params(arrays) -> ModelParams:
    """Assemble a ModelParams from arrays in checkpoint order (no validation)."""
    it = iter(arrays)
    enc = EncoderParams(next(it), next(it), next(it))
    att = AttentionParams(next(it), next(it), next(it), next(it))
    emb = next(it)
    gates = [GateParams(next(it), next(it), next(it), next(it)) for _ in range(4)]
    dec = DecoderParams(emb, *gates, next(it), next(it))
    return ModelParams(encoder=enc, attention=att, decoder=dec)


def params_from_arrays(arrays: list[np.ndarray], dims: ModelDims) -> ModelParams:
    """Assemble a ModelParams from arrays given in checkpoint order."""
    expected = tensor_shapes(dims)
    if len(arrays) != len(expected):
        raise ShapeError(f"expected {len(expected)} tensors, got {len(arrays)}")
    for a, (name, shape) in zip(arrays, expected):
        if a.shape != shape:
            raise ShapeError(f"tensor {name} has shape {a.shape}, expected {shape}")
    return rebuild_params(arrays)


def flat_tensors(params: ModelParams) -> list[np.ndarray]:
    """Arrays only, in checkpoint order."""
    return [a for _, a in params.tensors()]


def zip_map_params(fn, first: ModelParams, *rest: ModelParams) -> ModelParams:
    """Combine congruent containers tensor-by-tensor into a new one."""
    columns = [flat_tensors(p) for p in rest]
    arrays = [
        fn(a, *(col[i] for col in columns))
        for i, a in enumerate(flat_tensors(first))
    ]
    return rebuild_params(arrays)


def init_params(dims: ModelDims, seed: int = 0, init_scale: float = 0.1) -> ModelParams:
    """Seeded uniform(-init_scale, init_scale) weights with zero biases."""
    if init_scale <= 0:
        raise ConfigError(f"init_scale must be positive, got {init_scale}")
    rng = np.random.default_rng(seed)
    arrays = []
    for name, shape in tensor_shapes(dims):
        if name.endswith((".b", ".mid_b", ".bias", ".out_b")):
            arrays.append(np.zeros(shape))
        else:
            arrays.append(rng.uniform(-init_scale, init_scale, size=shape))
    return params_from_arrays(arrays, dims)


def zero_params(dims: ModelDims) -> ModelParams:
    """All-zero parameters; gives the exactly uniform word distribution."""
    return params_from_arrays([np.zeros(s) for _, s in tensor_shapes(dims)], dims)


def zeros_like_params(params: ModelParams) -> ModelParams:
    return map_params(np.zeros_like, params)


def map_params(fn, params: ModelParams) -> ModelParams:
    """Apply fn to every tensor, producing a new congruent container."""
    def gate(g: GateParams) -> GateParams:
        return GateParams(fn(g.w_x), fn(g.w_h), fn(g.w_v), fn(g.b))

    return ModelParams(
        encoder=EncoderParams(
            fn(params.encoder.mid_w), fn(params.encoder.mid_b), fn(params.encoder.out_w)
        ),
        attention=AttentionParams(
            fn(params.attention.local_w),
            fn(params.attention.state_w),
            fn(params.attention.bias),
            fn(params.attention.score_w),
        ),
        decoder=DecoderParams(
            fn(params.decoder.embedding),
            gate(params.decoder.gate_i),
            gate(params.decoder.gate_f),
            gate(params.decoder.gate_o),
            gate(params.decoder.gate_q),
            fn(params.decoder.out_w),
            fn(params.decoder.out_b),
        ),
    )

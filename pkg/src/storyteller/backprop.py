"""Exact reverse-mode differentiation of the story likelihood.

The forward pass replays the decoder's teacher-forced rollout over a
batch of stories, caching every intermediate; the backward pass applies
the chain rule step by step in reverse (backpropagation through time),
through the output softmax, the four LSTM gates, the attention softmax,
and the global-context MLP.

For throughput, sentences are grouped by (branch, length) and each
group advances as one dense batch; the math per sample is identical to
the single-sample rollout in decoder.py. Group order and in-group story
order are fixed, so gradients are bit-reproducible.

tanh derivatives route through numerics.tanh_grad, attention through
_attention_backward, and the forget-gate term through
_forget_gate_grad; the gradient-check mutation tests patch these to
prove the checker catches a broken backward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .corpus import BOS, EOS, PAD
from .encoder import embed_global_batch
from .errors import ShapeError
from .features import SequenceFeatures
from .numerics import log_softmax_rows, sigmoid, sigmoid_grad, softmax_rows
from .params import (
    AttentionParams,
    Gradients,
    ModelParams,
    zeros_like_params,
)

Batch = list[tuple[SequenceFeatures, list[np.ndarray]]]


@dataclass
class _StepCache:
    tokens_prev: np.ndarray  # (B,) input token ids
    targets: np.ndarray      # (B,) predicted token ids
    h_prev: np.ndarray       # (B, H)
    c_prev: np.ndarray       # (B, H)
    z: np.ndarray            # (B, M, attn_dim) attention tanh layer
    k: np.ndarray            # (B, M) attention weights
    v: np.ndarray            # (B, local_dim) context vectors
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    q: np.ndarray
    c: np.ndarray
    ct: np.ndarray           # tanh(c)
    h: np.ndarray
    probs: np.ndarray        # (B, V)


@dataclass
class _GroupCache:
    idx: np.ndarray          # story indices within the batch
    locals_: np.ndarray      # (B, M, local_dim)
    steps: list[_StepCache]


@dataclass
class BatchCache:
    globals_: np.ndarray
    mid: np.ndarray | None   # encoder tanh layer, None when h0 is forced to 0
    h0: np.ndarray
    groups: list[_GroupCache]
    total_tokens: int
    total_logprob: float


def _validate_batch(batch: Batch, params: ModelParams) -> None:
    if not batch:
        raise ShapeError("batch must contain at least one story")
    vocab_size = params.decoder.embedding.shape[0]
    first = batch[0][0]
    for feats, story in batch:
        if (feats.global_dim, feats.num_regions, feats.local_dim, feats.num_images) != (
            first.global_dim,
            first.num_regions,
            first.local_dim,
            first.num_images,
        ):
            raise ShapeError("all stories in a batch must share feature dimensions")
        if len(story) != feats.num_images:
            raise ShapeError(
                f"story has {len(story)} sentences but features carry "
                f"{feats.num_images} images"
            )
        for sent in story:
            ids = np.asarray(sent)
            if ids.size == 0 or ids[-1] != EOS:
                raise ShapeError("sentence ids must be non-empty and terminate with eos")
            if ids.min() < 0 or ids.max() >= vocab_size:
                raise ShapeError(
                    f"token id {int(ids.max())} out of range for vocabulary "
                    f"of size {vocab_size}"
                )
            if (ids == PAD).any():
                raise ShapeError("sentence ids must not contain the pad id")


def _gate_stacks(params: ModelParams):
    """Gate tensors concatenated to (4H, .) so each step is one matmul."""
    gates = params.decoder.gates
    w_x = np.concatenate([g.w_x for g in gates], axis=0)
    w_h = np.concatenate([g.w_h for g in gates], axis=0)
    w_v = np.concatenate([g.w_v for g in gates], axis=0)
    b = np.concatenate([g.b for g in gates], axis=0)
    return w_x, w_h, w_v, b


def forward_batch(
    batch: Batch,
    params: ModelParams,
    use_global_context: bool = True,
    with_cache: bool = False,
) -> BatchCache:
    """Teacher-forced rollout over a batch of (features, story) pairs.

    Returns a BatchCache whose total_logprob is the summed story
    log-likelihood and total_tokens the number of scored tokens. With
    with_cache=False the per-step caches are omitted (forward only).
    """
    _validate_batch(batch, params)
    num_images = batch[0][0].num_images
    hidden = params.encoder.out_w.shape[0]
    emb = params.decoder.embedding
    out_w, out_b = params.decoder.out_w, params.decoder.out_b
    att = params.attention
    w_x, w_h, w_v, b_all = _gate_stacks(params)

    globals_ = np.stack([feats.global_vec for feats, _ in batch])
    if use_global_context:
        h0_all, mid = embed_global_batch(globals_, params.encoder)
    else:
        h0_all, mid = np.zeros((len(batch), hidden)), None

    # Sentences grouped by (branch, length) advance as one dense batch.
    groups_by_key: dict[tuple[int, int], list[int]] = {}
    for b, (_, story) in enumerate(batch):
        for j in range(num_images):
            groups_by_key.setdefault((j, len(story[j])), []).append(b)

    total = 0.0
    total_tokens = 0
    groups: list[_GroupCache] = []
    for (j, length), members in sorted(groups_by_key.items()):
        idx = np.asarray(members, dtype=np.int64)
        locals_ = np.stack([batch[b][0].locals[j] for b in members])
        sents = np.stack([np.asarray(batch[b][1][j], dtype=np.int64) for b in members])
        bsz = idx.shape[0]
        rows = np.arange(bsz)

        lp_local = locals_ @ att.local_w.T  # (B, M, attn_dim), reused every step
        h = h0_all[idx]
        c = np.zeros((bsz, hidden))
        steps: list[_StepCache] = []
        for t in range(length):
            tokens_prev = sents[:, t - 1] if t > 0 else np.full(bsz, BOS, dtype=np.int64)
            x = emb[tokens_prev]
            z = np.tanh(lp_local + (h @ att.state_w.T + att.bias)[:, None, :])
            scores = z @ att.score_w[0]
            k = softmax_rows(scores)
            v = np.einsum("bm,bmd->bd", k, locals_)
            pre = x @ w_x.T + h @ w_h.T + v @ w_v.T + b_all
            i = sigmoid(pre[:, :hidden])
            f = sigmoid(pre[:, hidden : 2 * hidden])
            o = sigmoid(pre[:, 2 * hidden : 3 * hidden])
            q = np.tanh(pre[:, 3 * hidden :])
            c_new = f * c + i * q
            ct = np.tanh(c_new)
            h_new = o * ct
            logp = log_softmax_rows(h_new @ out_w.T + out_b)
            targets = sents[:, t]
            total += float(logp[rows, targets].sum())
            if with_cache:
                steps.append(
                    _StepCache(
                        tokens_prev=tokens_prev,
                        targets=targets,
                        h_prev=h,
                        c_prev=c,
                        z=z,
                        k=k,
                        v=v,
                        i=i,
                        f=f,
                        o=o,
                        q=q,
                        c=c_new,
                        ct=ct,
                        h=h_new,
                        probs=np.exp(logp),
                    )
                )
            h, c = h_new, c_new
        total_tokens += bsz * length
        groups.append(_GroupCache(idx=idx, locals_=locals_, steps=steps))

    return BatchCache(
        globals_=globals_,
        mid=mid,
        h0=h0_all,
        groups=groups,
        total_tokens=total_tokens,
        total_logprob=total,
    )


def _forget_gate_grad(d_c: np.ndarray, c_prev: np.ndarray) -> np.ndarray:
    """Gradient reaching the forget gate's activation from the cell update."""
    return d_c * c_prev


def _attention_backward(
    d_v: np.ndarray,
    locals_: np.ndarray,
    step: _StepCache,
    att: AttentionParams,
    g_att: AttentionParams,
) -> np.ndarray:
    """Backward through context vector, softmax, and scorer MLP.

    Accumulates parameter gradients into g_att and returns the gradient
    flowing into the previous hidden state, shape (B, H).
    """
    k, z, h_prev = step.k, step.z, step.h_prev
    d_k = np.einsum("bd,bmd->bm", d_v, locals_)
    d_scores = k * (d_k - np.sum(d_k * k, axis=1, keepdims=True))
    g_att.score_w[0] += np.einsum("bm,bmd->d", d_scores, z)
    d_z = d_scores[:, :, None] * att.score_w[0][None, None, :]
    d_pre = d_z * numerics.tanh_grad(z)
    g_att.bias += d_pre.sum(axis=(0, 1))
    g_att.local_w += np.einsum("bmd,bml->dl", d_pre, locals_)
    g_att.state_w += np.einsum("bmd,bh->dh", d_pre, h_prev)
    return np.einsum("bmd,dh->bh", d_pre, att.state_w)


def backward_batch(
    cache: BatchCache,
    params: ModelParams,
    scale: float,
    use_global_context: bool = True,
) -> Gradients:
    """Gradients of scale * (-total_logprob) w.r.t. every parameter.

    Pass scale = 1 / total_tokens to get the gradient of the per-token
    mean negative log-likelihood.
    """
    grads = zeros_like_params(params)
    hidden = params.encoder.out_w.shape[0]
    emb = params.decoder.embedding
    out_w = params.decoder.out_w
    att = params.attention
    w_x, w_h, w_v, _ = _gate_stacks(params)

    g_wx = np.zeros_like(w_x)
    g_wh = np.zeros_like(w_h)
    g_wv = np.zeros_like(w_v)
    g_b = np.zeros(4 * hidden)
    g_emb = grads.decoder.embedding
    d_h0 = np.zeros_like(cache.h0)

    for group in cache.groups:
        bsz = group.idx.shape[0]
        rows = np.arange(bsz)
        d_h_next = np.zeros((bsz, hidden))
        d_c_next = np.zeros((bsz, hidden))
        for step in reversed(group.steps):
            d_logits = step.probs * scale
            d_logits[rows, step.targets] -= scale
            grads.decoder.out_w += d_logits.T @ step.h
            grads.decoder.out_b += d_logits.sum(axis=0)
            d_h = d_logits @ out_w + d_h_next

            d_o = d_h * step.ct
            d_c = d_h * step.o * numerics.tanh_grad(step.ct) + d_c_next
            d_f = _forget_gate_grad(d_c, step.c_prev)
            d_i = d_c * step.q
            d_q = d_c * step.i
            d_c_next = d_c * step.f

            d_pre = np.concatenate(
                [
                    d_i * sigmoid_grad(step.i),
                    d_f * sigmoid_grad(step.f),
                    d_o * sigmoid_grad(step.o),
                    d_q * numerics.tanh_grad(step.q),
                ],
                axis=1,
            )
            x = emb[step.tokens_prev]
            g_wx += d_pre.T @ x
            g_wh += d_pre.T @ step.h_prev
            g_wv += d_pre.T @ step.v
            g_b += d_pre.sum(axis=0)
            np.add.at(g_emb, step.tokens_prev, d_pre @ w_x)
            d_v = d_pre @ w_v

            d_h_prev = d_pre @ w_h
            d_h_prev += _attention_backward(d_v, group.locals_, step, att, grads.attention)
            d_h_next = d_h_prev
        d_h0[group.idx] += d_h_next

    for gi, gate in enumerate(grads.decoder.gates):
        sl = slice(gi * hidden, (gi + 1) * hidden)
        gate.w_x += g_wx[sl]
        gate.w_h += g_wh[sl]
        gate.w_v += g_wv[sl]
        gate.b += g_b[sl]

    if use_global_context:
        grads.encoder.out_w += d_h0.T @ cache.mid
        d_mid = d_h0 @ params.encoder.out_w
        d_pre = d_mid * numerics.tanh_grad(cache.mid)
        grads.encoder.mid_w += d_pre.T @ cache.globals_
        grads.encoder.mid_b += d_pre.sum(axis=0)
    return grads

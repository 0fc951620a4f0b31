"""The paralleled LSTM decoder.

One branch per image: all branches share the same parameters and the
same initial hidden state h0, but each consumes its own image's local
features through attention. Scoring is teacher-forced; generation is
greedy or beam search over cumulative log-probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import attend
from .corpus import BOS, EOS, PAD, UNK
from .encoder import embed_global
from .errors import ShapeError
from .features import SequenceFeatures
from .numerics import log_softmax, sigmoid, tanh_act
from .params import DecoderParams, ModelParams

# Ids that generation may never emit; eos stays available so sentences
# can terminate.
MASKED_AT_DECODE = (PAD, BOS, UNK)


@dataclass
class DecoderState:
    """Hidden and cell state of one branch."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def initial(cls, h0: np.ndarray) -> "DecoderState":
        return cls(h=np.asarray(h0, dtype=np.float64), c=np.zeros_like(h0))


@dataclass
class Hypothesis:
    """A beam-search prefix: emitted ids, cumulative log-prob, state."""

    ids: tuple[int, ...]
    logprob: float
    state: DecoderState

    @property
    def finished(self) -> bool:
        return len(self.ids) > 0 and self.ids[-1] == EOS


def lstm_step(
    state: DecoderState,
    x_prev: np.ndarray,
    context: np.ndarray,
    params: DecoderParams,
) -> DecoderState:
    """Advance one branch one step.

    i, f, o = sigmoid of (w_x@x + w_h@h + w_v@v + b) per gate,
    q = tanh of the same form, then c' = f*c + i*q and h' = o*tanh(c').
    """
    x = np.asarray(x_prev, dtype=np.float64)
    v = np.asarray(context, dtype=np.float64)
    h, c = state.h, state.c
    gi, gf, go, gq = params.gates
    if gi.w_x.shape[1] != x.shape[0] or gi.w_v.shape[1] != v.shape[0]:
        raise ShapeError(
            f"gate weights {gi.w_x.shape}/{gi.w_v.shape} incompatible with "
            f"input shape {x.shape} / context shape {v.shape}"
        )
    pre = [g.w_x @ x + g.w_h @ h + g.w_v @ v + g.b for g in (gi, gf, go, gq)]
    i = sigmoid(pre[0])
    f = sigmoid(pre[1])
    o = sigmoid(pre[2])
    q = tanh_act(pre[3])
    c_new = f * c + i * q
    return DecoderState(h=o * tanh_act(c_new), c=c_new)


def step_logits(state: DecoderState, params: DecoderParams) -> np.ndarray:
    """Unnormalized word scores from the current hidden state, shape (V,)."""
    return params.out_w @ state.h + params.out_b


def _step(
    local_feats: np.ndarray,
    state: DecoderState,
    x_prev: np.ndarray,
    params: ModelParams,
):
    """Attention + recurrence for one timestep; returns (state', weights)."""
    k, v = attend(local_feats, state.h, params.attention)
    return lstm_step(state, x_prev, v, params.decoder), k


def sentence_log_prob(
    local_feats: np.ndarray,
    h0: np.ndarray,
    sentence: np.ndarray,
    params: ModelParams,
) -> float:
    """Teacher-forced log-probability of one sentence given one image.

    The first input word is bos; the sentence must terminate with eos.
    """
    ids = np.asarray(sentence, dtype=np.int64)
    vocab_size = params.decoder.embedding.shape[0]
    if ids.size == 0 or ids[-1] != EOS:
        raise ShapeError("sentence ids must be non-empty and terminate with eos")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise ShapeError(
            f"token id {int(ids.max())} out of range for vocabulary of size {vocab_size}"
        )
    state = DecoderState.initial(h0)
    x = params.decoder.embedding[BOS]
    total = 0.0
    for tok in ids:
        state, _ = _step(local_feats, state, x, params)
        total += float(log_softmax(step_logits(state, params.decoder))[tok])
        x = params.decoder.embedding[tok]
    return total


def story_log_likelihood(
    features: SequenceFeatures,
    story: list[np.ndarray],
    params: ModelParams,
) -> float:
    """Sum of per-branch sentence log-probs with the shared h0."""
    if len(story) != features.num_images:
        raise ShapeError(
            f"story has {len(story)} sentences but features carry "
            f"{features.num_images} images"
        )
    h0 = embed_global(features.global_vec, params.encoder)
    return sum(
        sentence_log_prob(features.locals[j], h0, sent, params)
        for j, sent in enumerate(story)
    )


def _masked_order(logits: np.ndarray) -> np.ndarray:
    masked = logits.copy()
    masked[list(MASKED_AT_DECODE)] = -np.inf
    return masked


def greedy_decode(
    features: SequenceFeatures,
    params: ModelParams,
    max_len: int = 20,
) -> list[np.ndarray]:
    """Argmax decoding per branch; ties resolve to the lowest token id.

    Emission stops at eos or after max_len tokens. The emitted eos, when
    reached, is part of the returned ids.
    """
    if max_len < 1:
        raise ShapeError(f"max_len must be >= 1, got {max_len}")
    h0 = embed_global(features.global_vec, params.encoder)
    story = []
    for j in range(features.num_images):
        state = DecoderState.initial(h0)
        x = params.decoder.embedding[BOS]
        ids: list[int] = []
        for _ in range(max_len):
            state, _ = _step(features.locals[j], state, x, params)
            tok = int(np.argmax(_masked_order(step_logits(state, params.decoder))))
            ids.append(tok)
            if tok == EOS:
                break
            x = params.decoder.embedding[tok]
        story.append(np.asarray(ids, dtype=np.int64))
    return story


def greedy_decode_with_attention(
    features: SequenceFeatures,
    params: ModelParams,
    max_len: int = 20,
):
    """Greedy decoding that also returns per-step attention weights.

    Returns (story ids, weights) where weights[j] is a list of (M,)
    arrays, one per emitted token of branch j.
    """
    h0 = embed_global(features.global_vec, params.encoder)
    story, attn = [], []
    for j in range(features.num_images):
        state = DecoderState.initial(h0)
        x = params.decoder.embedding[BOS]
        ids: list[int] = []
        steps: list[np.ndarray] = []
        for _ in range(max_len):
            state, k = _step(features.locals[j], state, x, params)
            steps.append(k)
            tok = int(np.argmax(_masked_order(step_logits(state, params.decoder))))
            ids.append(tok)
            if tok == EOS:
                break
            x = params.decoder.embedding[tok]
        story.append(np.asarray(ids, dtype=np.int64))
        attn.append(steps)
    return story, attn


def beam_decode(
    features: SequenceFeatures,
    params: ModelParams,
    beam: int = 1,
    max_len: int = 20,
) -> list[np.ndarray]:
    """Beam search per branch over total log-probability.

    No length normalization. Candidates are ranked by log-prob with ties
    broken by lexicographically smallest id sequence, which makes beam=1
    coincide with greedy decoding. Hypotheses that emit eos retire and
    compete with everything else on total log-prob.
    """
    if beam < 1:
        raise ShapeError(f"beam width must be >= 1, got {beam}")
    if max_len < 1:
        raise ShapeError(f"max_len must be >= 1, got {max_len}")
    h0 = embed_global(features.global_vec, params.encoder)
    allowed = [
        t for t in range(params.decoder.embedding.shape[0]) if t not in MASKED_AT_DECODE
    ]
    story = []
    for j in range(features.num_images):
        live = [Hypothesis(ids=(), logprob=0.0, state=DecoderState.initial(h0))]
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            if not live:
                break
            candidates: list[Hypothesis] = []
            for hyp in live:
                x = params.decoder.embedding[hyp.ids[-1] if hyp.ids else BOS]
                state, _ = _step(features.locals[j], hyp.state, x, params)
                logp = log_softmax(step_logits(state, params.decoder))
                for tok in allowed:
                    candidates.append(
                        Hypothesis(
                            ids=hyp.ids + (tok,),
                            logprob=hyp.logprob + float(logp[tok]),
                            state=state,
                        )
                    )
            candidates.sort(key=lambda hyp: (-hyp.logprob, hyp.ids))
            # Only candidates inside the beam survive; eos-ended ones
            # retire and their slots are not refilled. This is what makes
            # beam=1 coincide with greedy decoding.
            live = []
            for hyp in candidates[:beam]:
                if hyp.finished:
                    finished.append(hyp)
                else:
                    live.append(hyp)
        pool = finished + live
        pool.sort(key=lambda hyp: (-hyp.logprob, hyp.ids))
        story.append(np.asarray(pool[0].ids, dtype=np.int64))
    return story

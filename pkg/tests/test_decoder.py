from itertools import product

import numpy as np
import pytest

from storyteller.corpus import BOS, EOS, PAD, UNK
from storyteller.decoder import (
    DecoderState,
    MASKED_AT_DECODE,
    _step,
    beam_decode,
    greedy_decode,
    lstm_step,
    sentence_log_prob,
    step_logits,
    story_log_likelihood,
)
from storyteller.encoder import embed_global
from storyteller.errors import ShapeError
from storyteller.features import SequenceFeatures
from storyteller.numerics import log_softmax, softmax
from storyteller.params import init_params, zero_params
from storyteller.trainer import random_batch

from conftest import SMALL_DIMS

HALF_TANH_HALF = 0.23105857863000487925  # 0.5 * tanh(0.5), mpmath


def zero_state(h=4):
    return DecoderState(h=np.zeros(h), c=np.zeros(h))


class TestLstmStep:
    def test_all_zero(self, small_dims):
        params = zero_params(small_dims).decoder
        state = lstm_step(zero_state(), np.zeros(4), np.zeros(4), params)
        np.testing.assert_array_equal(state.c, np.zeros(4))
        np.testing.assert_array_equal(state.h, np.zeros(4))

    def test_zero_params_with_unit_cell(self, small_dims):
        params = zero_params(small_dims).decoder
        state = lstm_step(
            DecoderState(h=np.zeros(4), c=np.ones(4)), np.zeros(4), np.zeros(4), params
        )
        np.testing.assert_allclose(state.c, np.full(4, 0.5), atol=1e-15)
        np.testing.assert_allclose(state.h, np.full(4, HALF_TANH_HALF), atol=1e-15)

    def test_saturated_forget_gate_preserves_cell(self, small_dims):
        params = zero_params(small_dims).decoder
        params.gate_f.b[:] = 100.0
        state = lstm_step(
            DecoderState(h=np.zeros(4), c=np.full(4, 2.0)), np.zeros(4), np.zeros(4), params
        )
        np.testing.assert_allclose(state.c, np.full(4, 2.0), atol=1e-12)

    def test_dimension_mismatch(self, small_params):
        with pytest.raises(ShapeError):
            lstm_step(zero_state(), np.zeros(9), np.zeros(4), small_params.decoder)

    def test_hidden_state_bounded(self, small_params, rng):
        state = zero_state()
        for _ in range(30):
            state = lstm_step(
                state,
                rng.normal(scale=3.0, size=4),
                rng.normal(scale=3.0, size=4),
                small_params.decoder,
            )
            assert (np.abs(state.h) < 1.0).all()


class TestStepLogits:
    def test_zero_gives_uniform(self, small_dims):
        params = zero_params(small_dims).decoder
        probs = softmax(step_logits(zero_state(), params))
        np.testing.assert_allclose(probs, np.full(7, 1 / 7), atol=1e-15)

    def test_saturated_bias_concentrates_mass(self, small_dims):
        params = zero_params(small_dims).decoder
        params.out_b[5] = 100.0
        probs = softmax(step_logits(zero_state(), params))
        assert probs[5] == pytest.approx(1.0, abs=1e-12)

    def test_two_way_softmax_oracle(self, small_dims):
        # logits (ln 2, 0) -> probabilities (2/3, 1/3)
        params = zero_params(small_dims).decoder
        params.out_b[:] = -1e9
        params.out_b[4] = np.log(2.0)
        params.out_b[5] = 0.0
        probs = softmax(step_logits(zero_state(), params))
        assert probs[4] == pytest.approx(2 / 3, abs=1e-12)
        assert probs[5] == pytest.approx(1 / 3, abs=1e-12)

    def test_distribution_valid_for_random_states(self, small_params, rng):
        for _ in range(100):
            state = DecoderState(h=rng.uniform(-1, 1, 4), c=rng.normal(size=4))
            probs = softmax(step_logits(state, small_params.decoder))
            assert (probs > 0).all()
            assert abs(probs.sum() - 1.0) < 1e-12


def forced_half_params(dims):
    """Zero model whose word distribution is 0.5/0.5 on {id 4, eos}."""
    params = zero_params(dims)
    params.decoder.out_b[:] = -1e9
    params.decoder.out_b[4] = 0.0
    params.decoder.out_b[EOS] = 0.0
    return params


class TestSentenceLogProb:
    def test_single_eos_uniform_model(self, small_dims, rng):
        params = zero_params(small_dims)
        feats = rng.normal(size=(3, 4))
        lp = sentence_log_prob(feats, np.zeros(4), np.array([EOS]), params)
        assert lp == pytest.approx(np.log(1 / 7), abs=1e-12)

    def test_always_nonpositive(self, small_params, rng):
        for _ in range(20):
            length = int(rng.integers(1, 5))
            ids = np.concatenate([rng.integers(4, 7, size=length), [EOS]])
            lp = sentence_log_prob(
                rng.normal(size=(3, 4)), rng.uniform(-1, 1, 4), ids, small_params
            )
            assert lp <= 0.0

    def test_forced_half_probabilities(self, small_dims, rng):
        params = forced_half_params(small_dims)
        lp = sentence_log_prob(
            rng.normal(size=(3, 4)), np.zeros(4), np.array([4, EOS]), params
        )
        assert lp == pytest.approx(2 * np.log(0.5), abs=1e-9)

    def test_requires_eos_termination(self, small_params, rng):
        with pytest.raises(ShapeError):
            sentence_log_prob(rng.normal(size=(3, 4)), np.zeros(4), np.array([4]), small_params)

    def test_out_of_range_token(self, small_params, rng):
        with pytest.raises(ShapeError):
            sentence_log_prob(
                rng.normal(size=(3, 4)), np.zeros(4), np.array([99, EOS]), small_params
            )


class TestStoryLogLikelihood:
    def make_features(self, rng, n=2):
        return SequenceFeatures(
            global_vec=rng.normal(size=6), locals=rng.normal(size=(n, 3, 4))
        )

    def test_single_branch_equals_sentence_score(self, small_params, rng):
        feats = SequenceFeatures(
            global_vec=rng.normal(size=6), locals=rng.normal(size=(1, 3, 4))
        )
        sent = np.array([4, 5, EOS])
        h0 = embed_global(feats.global_vec, small_params.encoder)
        expected = sentence_log_prob(feats.locals[0], h0, sent, small_params)
        assert story_log_likelihood(feats, [sent], small_params) == expected

    def test_branch_permutation_symmetry(self, small_params, rng):
        locals_ = rng.normal(size=(1, 3, 4))
        feats = SequenceFeatures(
            global_vec=rng.normal(size=6),
            locals=np.concatenate([locals_, locals_]),
        )
        sent = np.array([4, 6, EOS])
        total = story_log_likelihood(feats, [sent, sent], small_params)
        swapped = story_log_likelihood(feats, [sent.copy(), sent.copy()], small_params)
        assert total == swapped

    def test_uniform_model_counts_tokens(self, small_dims, rng):
        params = zero_params(small_dims)
        feats = self.make_features(rng)
        story = [np.array([EOS]), np.array([4, EOS])]
        total = story_log_likelihood(feats, story, params)
        assert total == pytest.approx(3 * np.log(1 / 7), abs=1e-12)

    def test_branch_count_mismatch(self, small_params, rng):
        feats = self.make_features(rng, n=2)
        with pytest.raises(ShapeError):
            story_log_likelihood(feats, [np.array([EOS])], small_params)

    def test_branch_isolation(self, small_params, rng):
        feats = self.make_features(rng, n=2)
        story = [np.array([4, EOS]), np.array([5, EOS])]
        h0 = embed_global(feats.global_vec, small_params.encoder)
        branch1_before = sentence_log_prob(feats.locals[0], h0, story[0], small_params)
        feats.locals[1] += 10.0
        branch1_after = sentence_log_prob(feats.locals[0], h0, story[0], small_params)
        assert branch1_before == branch1_after

    def test_equals_shared_h0_composition_bitwise(self, small_params, rng):
        feats = self.make_features(rng)
        story = [np.array([5, EOS]), np.array([4, 6, EOS])]
        h0 = embed_global(feats.global_vec, small_params.encoder)
        composed = sum(
            sentence_log_prob(feats.locals[j], h0, story[j], small_params)
            for j in range(2)
        )
        assert story_log_likelihood(feats, story, small_params) == composed


def replay_score(feats_j, h0, ids, params):
    """Teacher-forced score of an arbitrary emitted sequence."""
    state = DecoderState.initial(h0)
    x = params.decoder.embedding[BOS]
    total = 0.0
    for tok in ids:
        state, _ = _step(feats_j, state, x, params)
        total += float(log_softmax(step_logits(state, params.decoder))[int(tok)])
        x = params.decoder.embedding[int(tok)]
    return total


def enumerate_argmax(feats, params, max_len):
    """Brute-force best sequence per branch: all content strings of
    length < max_len terminated by eos, plus unterminated length-max_len
    strings; ties resolve to the lexicographically smallest sequence."""
    vocab_size = params.decoder.embedding.shape[0]
    content = [t for t in range(vocab_size) if t not in MASKED_AT_DECODE and t != EOS]
    h0 = embed_global(feats.global_vec, params.encoder)
    story = []
    for j in range(feats.num_images):
        best = None
        candidates = []
        for length in range(max_len):
            for combo in product(content, repeat=length):
                candidates.append(combo + (EOS,))
        candidates.extend(product(content, repeat=max_len))
        for ids in candidates:
            score = replay_score(feats.locals[j], h0, ids, params)
            key = (-score, ids)
            if best is None or key < best[0]:
                best = (key, ids)
        story.append(np.asarray(best[1], dtype=np.int64))
    return story


class TestGreedyDecode:
    def test_uniform_model_emits_eos(self, small_dims, rng):
        params = zero_params(small_dims)
        feats = SequenceFeatures(
            global_vec=rng.normal(size=6), locals=rng.normal(size=(2, 3, 4))
        )
        for sent in greedy_decode(feats, params, max_len=5):
            assert sent.tolist() == [EOS]

    def test_forced_token_truncates_at_max_len(self, small_dims, rng):
        params = zero_params(small_dims)
        params.decoder.out_b[5] = 100.0
        feats = SequenceFeatures(
            global_vec=rng.normal(size=6), locals=rng.normal(size=(1, 3, 4))
        )
        out = greedy_decode(feats, params, max_len=4)
        assert out[0].tolist() == [5, 5, 5, 5]

    def test_never_emits_masked_ids(self, rng):
        for seed in range(10):
            params = init_params(SMALL_DIMS, seed=seed, init_scale=1.5)
            feats = SequenceFeatures(
                global_vec=rng.normal(size=6), locals=rng.normal(size=(2, 3, 4))
            )
            for sent in greedy_decode(feats, params, max_len=6):
                assert not set(sent.tolist()) & {PAD, BOS, UNK}

    def test_deterministic(self, small_params, rng):
        feats = SequenceFeatures(
            global_vec=rng.normal(size=6), locals=rng.normal(size=(2, 3, 4))
        )
        a = greedy_decode(feats, small_params, max_len=6)
        b = greedy_decode(feats, small_params, max_len=6)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


class TestBeamDecode:
    def test_beam_one_equals_greedy_on_random_models(self):
        shared = np.random.default_rng(99)
        for seed in range(30):
            params = init_params(SMALL_DIMS, seed=seed, init_scale=1.0)
            feats = SequenceFeatures(
                global_vec=shared.normal(size=6),
                locals=shared.normal(size=(2, 3, 4)),
            )
            greedy = greedy_decode(feats, params, max_len=5)
            beam = beam_decode(feats, params, beam=1, max_len=5)
            for g, b in zip(greedy, beam):
                np.testing.assert_array_equal(g, b)

    def test_matches_exhaustive_enumeration(self):
        shared = np.random.default_rng(7)
        for seed in range(5):
            params = init_params(SMALL_DIMS, seed=seed, init_scale=1.2)
            feats = SequenceFeatures(
                global_vec=shared.normal(size=6),
                locals=shared.normal(size=(2, 3, 4)),
            )
            brute = enumerate_argmax(feats, params, max_len=3)
            beam = beam_decode(feats, params, beam=81, max_len=3)
            for a, b in zip(brute, beam):
                np.testing.assert_array_equal(a, b)

    def test_deterministic_across_runs(self, small_params, rng):
        feats = SequenceFeatures(
            global_vec=rng.normal(size=6), locals=rng.normal(size=(2, 3, 4))
        )
        a = beam_decode(feats, small_params, beam=3, max_len=5)
        b = beam_decode(feats, small_params, beam=3, max_len=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_extension_never_increases_score(self, small_params, rng):
        feats = SequenceFeatures(
            global_vec=rng.normal(size=6), locals=rng.normal(size=(1, 3, 4))
        )
        h0 = embed_global(feats.global_vec, small_params.encoder)
        prefix: tuple[int, ...] = ()
        score = 0.0
        for tok in (4, 5, 6, EOS):
            extended = prefix + (tok,)
            new_score = replay_score(feats.locals[0], h0, extended, small_params)
            assert new_score <= score + 1e-12
            prefix, score = extended, new_score


class TestBatchedForwardAgreement:
    def test_trainer_batch_matches_decoder_surface(self, small_params, small_dims):
        # The grouped training forward and the per-sample scoring path
        # are independent implementations of the same math.
        from storyteller.trainer import loss

        rng = np.random.default_rng(17)
        batch = random_batch(small_dims, rng, num_stories=4)
        composed = sum(story_log_likelihood(f, s, small_params) for f, s in batch)
        tokens = sum(len(sent) for _, story in batch for sent in story)
        assert loss(batch, small_params) == pytest.approx(-composed / tokens, rel=1e-12)

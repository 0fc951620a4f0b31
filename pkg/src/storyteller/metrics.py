"""Corpus-level BLEU, ROUGE-L, and exact-match METEOR.

Variant decisions (the underlying papers leave them open, so they are
pinned here): BLEU is corpus-level with add-one smoothing applied to a
zero n-gram match count; ROUGE-L is the F-measure with beta=1.2
averaged over pairs; METEOR runs the exact-unigram stage only, with a
greedy earliest-occurrence alignment so scores are deterministic.
Every hypothesis has exactly one reference.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .corpus import StorySample, tokenize
from .errors import DataFormatError

TokenSeq = Sequence[str]
EvalPair = tuple[TokenSeq, TokenSeq]  # (hypothesis, reference)

ROUGE_BETA = 1.2


@dataclass
class MetricsReport:
    """Corpus scores, all in [0, 1]."""

    bleu_n: list[float]
    bleu: float
    rouge_l: float
    meteor: float
    pair_count: int

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu_n,
            "bleu4": self.bleu,
            "rouge_l": self.rouge_l,
            "meteor": self.meteor,
            "pairs": self.pair_count,
        }


def _ngram_counts(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(pairs: Sequence[EvalPair], max_n: int = 4) -> tuple[list[float], float]:
    """Cumulative BLEU-1..BLEU-max_n over the corpus.

    Clipped n-gram matches and totals are summed over all pairs before
    forming the precisions p_n; a zero match count is smoothed to
    (m + 1) / (t + 1). BLEU-k = BP * exp(mean of ln p_1..p_k), with the
    brevity penalty BP = min(1, exp(1 - r/c)) from the corpus reference
    length r and hypothesis length c. An all-empty hypothesis corpus
    scores 0.
    """
    if not pairs:
        raise DataFormatError("bleu requires at least one pair")
    matches = [0] * max_n
    totals = [0] * max_n
    ref_len = 0
    hyp_len = 0
    for hyp, ref in pairs:
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            totals[n - 1] += len(hyp) - n + 1
    if hyp_len == 0:
        return [0.0] * max_n, 0.0
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    log_p = []
    for m, t in zip(matches, totals):
        if m == 0:
            m, t = m + 1, t + 1
        log_p.append(math.log(m / t))
    scores = [bp * math.exp(sum(log_p[:k]) / k) for k in range(1, max_n + 1)]
    return scores, scores[-1]


def lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    """Length of the longest common subsequence (dynamic programming)."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(pairs: Sequence[EvalPair], beta: float = ROUGE_BETA) -> float:
    """Mean ROUGE-L F-measure over pairs.

    Per pair: R = LCS/|ref|, P = LCS/|hyp|,
    F = (1 + beta^2) R P / (R + beta^2 P), and 0 whenever the LCS is
    empty (which covers empty sides).
    """
    if not pairs:
        raise DataFormatError("rouge_l requires at least one pair")
    total = 0.0
    for hyp, ref in pairs:
        lcs = lcs_length(hyp, ref)
        if lcs == 0:
            continue
        r = lcs / len(ref)
        p = lcs / len(hyp)
        total += (1 + beta**2) * r * p / (r + beta**2 * p)
    return total / len(pairs)


def align_exact(hyp: TokenSeq, ref: TokenSeq) -> list[tuple[int, int]]:
    """Greedy one-to-one unigram alignment.

    Walk the hypothesis left to right; each token claims the earliest
    unmatched occurrence of itself in the reference.
    """
    taken = [False] * len(ref)
    pairs = []
    for i, tok in enumerate(hyp):
        for j, rtok in enumerate(ref):
            if not taken[j] and rtok == tok:
                taken[j] = True
                pairs.append((i, j))
                break
    return pairs


def _chunk_count(alignment: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor(pairs: Sequence[EvalPair]) -> float:
    """Mean exact-stage METEOR over pairs.

    Per pair with m matched unigrams: P = m/|hyp|, R = m/|ref|,
    F_mean = 10 P R / (R + 9 P), penalty = 0.5 * (chunks / m)^3, and
    score = F_mean * (1 - penalty); m = 0 scores 0.
    """
    if not pairs:
        raise DataFormatError("meteor requires at least one pair")
    total = 0.0
    for hyp, ref in pairs:
        alignment = align_exact(hyp, ref)
        m = len(alignment)
        if m == 0:
            continue
        p = m / len(hyp)
        r = m / len(ref)
        f_mean = 10 * p * r / (r + 9 * p)
        penalty = 0.5 * (_chunk_count(alignment) / m) ** 3
        total += f_mean * (1 - penalty)
    return total / len(pairs)


def story_pairs(
    outputs: Sequence[Sequence[str]],
    references: Sequence[StorySample],
    pairing: str = "sentence",
) -> list[EvalPair]:
    """Tokenized evaluation pairs from generated and reference stories.

    pairing="sentence" pairs sentence j of each generated story with
    reference sentence j; pairing="story" concatenates each story's
    sentences into a single pair.
    """
    if pairing not in ("sentence", "story"):
        raise DataFormatError(f"pairing must be 'sentence' or 'story', got {pairing!r}")
    if len(outputs) != len(references):
        raise DataFormatError(
            f"{len(outputs)} generated stories but {len(references)} references"
        )
    pairs: list[EvalPair] = []
    for out, sample in zip(outputs, references):
        if len(out) != len(sample.sentences):
            raise DataFormatError(
                f"story {sample.id!r}: {len(out)} generated sentences but "
                f"{len(sample.sentences)} references"
            )
        hyp_sents = [tokenize(s) for s in out]
        ref_sents = [tokenize(s) for s in sample.sentences]
        if pairing == "sentence":
            pairs.extend(zip(hyp_sents, ref_sents))
        else:
            pairs.append(
                ([t for s in hyp_sents for t in s], [t for s in ref_sents for t in s])
            )
    return pairs


def evaluate_corpus(
    outputs: Sequence[Sequence[str]],
    references: Sequence[StorySample],
    pairing: str = "sentence",
) -> MetricsReport:
    """Score generated stories against references; see story_pairs."""
    pairs = story_pairs(outputs, references, pairing)
    if not pairs:
        raise DataFormatError("evaluation produced no pairs")
    bleu_n, bleu4 = bleu(pairs)
    return MetricsReport(
        bleu_n=bleu_n,
        bleu=bleu4,
        rouge_l=rouge_l(pairs),
        meteor=meteor(pairs),
        pair_count=len(pairs),
    )

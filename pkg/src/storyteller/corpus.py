"""Tokenization, vocabulary handling, and the dataset manifest format.

Token ids are dense: the four specials occupy ids 0-3 and content tokens
fill 4..size-1 in frequency order. Encoded sentences always terminate
with the end-of-sentence id, which is what the likelihood factorization
needs to know where a sentence stops.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataFormatError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")
NUM_SPECIALS = len(SPECIAL_TOKENS)

_PUNCT = set('.,!?;:"()')

VOCAB_VERSION = 1


def tokenize(text: str) -> list[str]:
    """Lowercase and split text into tokens.

    Punctuation characters in . , ! ? ; : " ( ) become standalone tokens;
    everything else splits on whitespace. Empty text gives an empty list.
    """
    out: list[str] = []
    buf: list[str] = []
    for ch in text.lower():
        if ch in _PUNCT:
            if buf:
                out.append("".join(buf))
                buf = []
            out.append(ch)
        elif ch.isspace():
            if buf:
                out.append("".join(buf))
                buf = []
        else:
            buf.append(ch)
    if buf:
        out.append("".join(buf))
    return out


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token <-> id mapping with fixed special ids 0-3."""

    id_to_token: tuple[str, ...]

    def __post_init__(self):
        if self.id_to_token[:NUM_SPECIALS] != SPECIAL_TOKENS:
            raise ConfigError("vocabulary must start with the special tokens")
        object.__setattr__(
            self,
            "_token_to_id",
            {tok: i for i, tok in enumerate(self.id_to_token)},
        )
        if len(self._token_to_id) != len(self.id_to_token):
            raise ConfigError("vocabulary contains duplicate tokens")

    @classmethod
    def from_content_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        return cls(SPECIAL_TOKENS + tuple(tokens))

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def token_to_id(self) -> dict:
        return self._token_to_id

    def id_of(self, token: str) -> int:
        """Id of a token, falling back to the unknown id."""
        return self._token_to_id.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < self.size:
            raise DataFormatError(
                f"token id {idx} out of range for vocabulary of size {self.size}"
            )
        return self.id_to_token[idx]


@dataclass
class StorySample:
    """One story: an id, a relative feature-file path, and its sentences."""

    id: str
    feature_ref: str
    sentences: list[str]


def build_vocab(samples: Iterable[StorySample], max_size: int) -> Vocabulary:
    """Build a frequency-ranked vocabulary capped at max_size ids total.

    The (max_size - 4) most frequent tokens get ids 4 upward; frequency
    ties break by lexicographic token order, so a fixed stream always
    produces an identical vocabulary. An empty corpus yields a
    vocabulary containing only the specials.
    """
    if max_size < NUM_SPECIALS + 1:
        raise ConfigError(f"max_size must be at least {NUM_SPECIALS + 1}, got {max_size}")
    counts: Counter = Counter()
    for sample in samples:
        for sentence in sample.sentences:
            counts.update(tokenize(sentence))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - NUM_SPECIALS]]
    return Vocabulary.from_content_tokens(kept)


def encode(sentence: str, vocab: Vocabulary) -> np.ndarray:
    """Encode a sentence to token ids, mapping OOV to unk and appending eos."""
    ids = [vocab.id_of(tok) for tok in tokenize(sentence)]
    ids.append(EOS)
    return np.asarray(ids, dtype=np.int64)


def decode(ids: Sequence[int], vocab: Vocabulary) -> str:
    """Invert encode: join tokens with spaces, dropping pad/bos/eos.

    Unknown tokens render as the literal "<unk>" surface form rather
    than being silently dropped.
    """
    words = []
    for idx in ids:
        idx = int(idx)
        if not 0 <= idx < vocab.size:
            raise DataFormatError(
                f"token id {idx} out of range for vocabulary of size {vocab.size}"
            )
        if idx in (PAD, BOS, EOS):
            continue
        words.append(vocab.id_to_token[idx])
    return " ".join(words)


def save_vocab(vocab: Vocabulary, path) -> None:
    """Write the vocabulary JSON: {"version": 1, "tokens": [...]}.

    The tokens array holds content tokens indexed by id - 4; the
    specials are implicit.
    """
    payload = {
        "version": VOCAB_VERSION,
        "tokens": list(vocab.id_to_token[NUM_SPECIALS:]),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False)
        fh.write("\n")


def load_vocab(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"vocabulary file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != VOCAB_VERSION:
        raise DataFormatError(f"vocabulary file {path} has unsupported version")
    tokens = payload.get("tokens")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise DataFormatError(f"vocabulary file {path} has a malformed token list")
    return Vocabulary.from_content_tokens(tokens)


def save_manifest(samples: Iterable[StorySample], path) -> None:
    """Write the dataset manifest as JSON Lines, one story per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {"id": s.id, "features": s.feature_ref, "sentences": s.sentences},
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_manifest(path, num_sentences: int | None = None) -> list[StorySample]:
    """Read a JSON Lines manifest, optionally enforcing N sentences per story."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                sample = StorySample(
                    id=str(obj["id"]),
                    feature_ref=str(obj["features"]),
                    sentences=[str(s) for s in obj["sentences"]],
                )
            except (KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: missing manifest field: {exc}") from exc
            if num_sentences is not None and len(sample.sentences) != num_sentences:
                raise DataFormatError(
                    f"{path}:{lineno}: story {sample.id!r} has "
                    f"{len(sample.sentences)} sentences, expected {num_sentences}"
                )
            samples.append(sample)
    return samples


def iter_manifest(path, num_sentences: int | None = None) -> Iterator[StorySample]:
    """Streaming variant of load_manifest."""
    yield from load_manifest(path, num_sentences)

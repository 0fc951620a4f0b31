"""Precomputed visual features: binary storage and synthetic corpora.

The .seqf format is little-endian: magic "SEQF", u32 version=1, u32 N,
u32 D_g, u32 M, u32 D_l, then D_g float32 globals, then N*M*D_l float32
locals (branch-major, region-major, channel-minor). No padding.

Feature values are quantized to float32 precision when a
SequenceFeatures is constructed (CNN features are float32 in practice),
then widened to float64 for arithmetic, which makes the save/load round
trip bit-exact for every instance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .corpus import StorySample
from .errors import ConfigError, DataFormatError, ShapeError

MAGIC = b"SEQF"
SEQF_VERSION = 1
_HEADER = struct.Struct("<4s5I")

# Element cap guarding against absurd headers before allocation.
_MAX_ELEMENTS = 1 << 31


def _quantize(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float32).astype(np.float64)


@dataclass
class SequenceFeatures:
    """Visual features for one story.

    Attributes:
        global_vec: whole-sequence feature vector, shape (D_g,)
        locals: per-image region features, shape (N, M, D_l)
    """

    global_vec: np.ndarray
    locals: np.ndarray

    def __post_init__(self):
        g = _quantize(self.global_vec)
        l = _quantize(self.locals)
        if g.ndim != 1:
            raise ShapeError(f"global features must be 1-D, got shape {g.shape}")
        if l.ndim != 3:
            raise ShapeError(f"local features must be 3-D (N, M, D_l), got shape {l.shape}")
        if min(g.shape[0], *l.shape) < 1:
            raise ShapeError(f"feature dimensions must be positive, got {g.shape} and {l.shape}")
        if not (np.isfinite(g).all() and np.isfinite(l).all()):
            raise ShapeError("features contain non-finite entries")
        self.global_vec = g
        self.locals = l

    @property
    def num_images(self) -> int:
        return self.locals.shape[0]

    @property
    def global_dim(self) -> int:
        return self.global_vec.shape[0]

    @property
    def num_regions(self) -> int:
        return self.locals.shape[1]

    @property
    def local_dim(self) -> int:
        return self.locals.shape[2]


def write_features(feats: SequenceFeatures, path) -> None:
    """Serialize features to a .seqf file."""
    n, m, dl = feats.locals.shape
    header = _HEADER.pack(MAGIC, SEQF_VERSION, n, feats.global_dim, m, dl)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(feats.global_vec.astype("<f4").tobytes())
            fh.write(feats.locals.astype("<f4").tobytes())
    except OSError as exc:
        raise DataFormatError(f"cannot write features to {path}: {exc}") from exc


def read_features(path) -> SequenceFeatures:
    """Read a .seqf file, validating magic, version, and dimensions."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read features from {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: short read, file smaller than the 24-byte header")
    magic, version, n, dg, m, dl = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != SEQF_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if min(n, dg, m, dl) < 1:
        raise DataFormatError(f"{path}: invalid dimensions N={n} D_g={dg} M={m} D_l={dl}")
    total = dg + n * m * dl
    if total > _MAX_ELEMENTS:
        raise DataFormatError(f"{path}: dimension overflow, {total} elements claimed")
    expected = _HEADER.size + 4 * total
    if len(raw) < expected:
        raise DataFormatError(f"{path}: short payload, {len(raw)} bytes but {expected} expected")
    if len(raw) > expected:
        raise DataFormatError(f"{path}: trailing data, {len(raw)} bytes but {expected} expected")
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return SequenceFeatures(
        global_vec=flat[:dg],
        locals=flat[dg:].reshape(n, m, dl),
    )


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for the synthetic feature/story generator."""

    num_stories: int
    num_topics: int = 2
    objects_per_image: int = 4
    noise_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.num_stories, self.num_topics, self.objects_per_image) < 1:
            raise ConfigError("SynthSpec counts must be >= 1")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")


OBJECT_TOKENS = ("cake", "ball", "tree", "car", "dog", "boat", "lamp", "fish")
# Final-image objects come from their own pool so the last branch is
# identifiable from its local features; the topic still reaches the
# connective only through the global vector.
FINALE_TOKENS = ("party", "crowd", "feast", "show")
RELATION_TOKENS = ("big", "small", "bright", "quiet")
CONNECTIVE_TOKENS = ("wedding", "game", "picnic", "parade", "market", "concert", "festival", "fair")


def topic_connectives(num_topics: int) -> tuple[str, ...]:
    """Connective token for each topic; deterministic and collision-free."""
    if num_topics <= len(CONNECTIVE_TOKENS):
        return CONNECTIVE_TOKENS[:num_topics]
    extra = tuple(f"topic{k}" for k in range(len(CONNECTIVE_TOKENS), num_topics))
    return CONNECTIVE_TOKENS + extra


def synthetic_prototypes(spec: SynthSpec, global_dim: int, local_dim: int):
    """Topic and object prototype vectors used by generate_synthetic.

    Derived from spec.seed alone, so callers (tests, the ablation
    experiment) can recover the exact prototypes a corpus was planted
    with. Object prototypes cover OBJECT_TOKENS followed by
    FINALE_TOKENS.
    """
    rng = np.random.default_rng(spec.seed)
    topic_protos = rng.normal(0.0, 1.0, size=(spec.num_topics, global_dim))
    object_protos = rng.normal(
        0.0, 1.0, size=(len(OBJECT_TOKENS) + len(FINALE_TOKENS), local_dim)
    )
    return topic_protos, object_protos


def generate_synthetic(
    spec: SynthSpec,
    global_dim: int = 16,
    local_dim: int = 8,
    num_sentences: int = 5,
) -> Iterator[tuple[StorySample, SequenceFeatures]]:
    """Yield (StorySample, SequenceFeatures) pairs with planted structure.

    Per story: a topic is drawn uniformly; the global vector is that
    topic's prototype plus gaussian noise. Each image's sentence follows
    the template "the <object> is <relation>" and its local matrix holds
    objects_per_image noisy views of the mentioned object's prototype.
    The relation is a fixed function of the object and the topic, so
    every word is predictable from the features (nothing rewards
    memorizing noise) and the global context matters for every
    sentence, not just the last one. The final sentence mentions an
    object from the finale pool and carries the topic's connective
    token in the relation slot; the connective is a deterministic
    function of the topic and the only path to it is the global vector.
    """
    rng = np.random.default_rng(spec.seed)
    topic_protos = rng.normal(0.0, 1.0, size=(spec.num_topics, global_dim))
    object_protos = rng.normal(
        0.0, 1.0, size=(len(OBJECT_TOKENS) + len(FINALE_TOKENS), local_dim)
    )
    connectives = topic_connectives(spec.num_topics)
    m = spec.objects_per_image

    for idx in range(spec.num_stories):
        topic = int(rng.integers(spec.num_topics))
        global_vec = topic_protos[topic] + rng.normal(0.0, spec.noise_scale, size=global_dim)
        sentences = []
        locals_ = np.empty((num_sentences, m, local_dim))
        for j in range(num_sentences):
            if j == num_sentences - 1:
                obj = len(OBJECT_TOKENS) + int(rng.integers(len(FINALE_TOKENS)))
                text = f"the {FINALE_TOKENS[obj - len(OBJECT_TOKENS)]} is {connectives[topic]}"
            else:
                obj = int(rng.integers(len(OBJECT_TOKENS)))
                rel = RELATION_TOKENS[(obj + topic) % len(RELATION_TOKENS)]
                text = f"the {OBJECT_TOKENS[obj]} is {rel}"
            sentences.append(text)
            locals_[j] = object_protos[obj] + rng.normal(0.0, spec.noise_scale, size=(m, local_dim))
        name = f"story-{idx:04d}"
        sample = StorySample(id=name, feature_ref=f"{name}.seqf", sentences=sentences)
        yield sample, SequenceFeatures(global_vec=global_vec, locals=locals_)


def story_topic(sample: StorySample, num_topics: int) -> int | None:
    """Recover the planted topic from a synthetic story's last sentence."""
    last = set(sample.sentences[-1].split())
    for k, conn in enumerate(topic_connectives(num_topics)):
        if conn in last:
            return k
    return None


def load_story_features(samples: Sequence[StorySample], features_dir) -> list[SequenceFeatures]:
    """Read each sample's .seqf file relative to features_dir."""
    import os

    return [read_features(os.path.join(features_dir, s.feature_ref)) for s in samples]

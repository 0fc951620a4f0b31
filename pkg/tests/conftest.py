import numpy as np
import pytest

from storyteller.corpus import build_vocab, encode
from storyteller.features import SynthSpec, generate_synthetic
from storyteller.params import ModelDims, init_params

SMALL_DIMS = ModelDims(
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


@pytest.fixture
def small_dims():
    return SMALL_DIMS


@pytest.fixture
def small_params(small_dims):
    return init_params(small_dims, seed=0, init_scale=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_corpus(num_stories=3, seed=5, global_dim=6, local_dim=4, num_sentences=2):
    """Synthetic stories shrunk to the small test dimensions."""
    spec = SynthSpec(
        num_stories=num_stories,
        num_topics=2,
        objects_per_image=3,
        noise_scale=0.1,
        seed=seed,
    )
    data = list(
        generate_synthetic(
            spec, global_dim=global_dim, local_dim=local_dim, num_sentences=num_sentences
        )
    )
    samples = [s for s, _ in data]
    feats = [f for _, f in data]
    vocab = build_vocab(samples, max_size=40)
    batch = [
        (f, [encode(s, vocab) for s in smp.sentences])
        for f, smp in zip(feats, samples)
    ]
    return samples, feats, vocab, batch

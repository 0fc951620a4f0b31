"""Scikit-learn style front door for the whole model.

StorySequenceGenerator wraps vocabulary building, parameter
initialization, likelihood training, and decoding behind fit/predict,
so the model composes with sklearn tooling (get_params/set_params,
clone, pipelines operating on lists).

X is a list of SequenceFeatures; y is a list of stories, each a list of
N raw sentence strings.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from .corpus import StorySample, build_vocab, decode, encode
from .decoder import beam_decode, greedy_decode
from .errors import ConfigError, ShapeError
from .features import SequenceFeatures
from .params import ModelDims, init_params, zero_params
from .trainer import TrainConfig, loss, train


def _check_features_list(X, num_sentences=None) -> None:
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ShapeError("X must be a non-empty list of SequenceFeatures")
    first = X[0]
    for feats in X:
        if not isinstance(feats, SequenceFeatures):
            raise ShapeError(f"X entries must be SequenceFeatures, got {type(feats).__name__}")
        if (feats.global_dim, feats.num_regions, feats.local_dim, feats.num_images) != (
            first.global_dim,
            first.num_regions,
            first.local_dim,
            first.num_images,
        ):
            raise ShapeError("all SequenceFeatures in X must share dimensions")
    if num_sentences is not None and first.num_images != num_sentences:
        raise ShapeError(
            f"features carry {first.num_images} images but the model expects {num_sentences}"
        )


class StorySequenceGenerator(BaseEstimator):
    """Generate a sentence per image of a sequence, fit by likelihood.

    Parameters mirror the training configuration; structural dimensions
    (feature sizes, images per story) are inferred from the data at fit
    time. With use_global_context=False the global-context pathway is
    disabled (h0 stays zero), which is the ablated baseline.
    """

    def __init__(
        self,
        hidden_dim: int = 512,
        embed_dim: int = 512,
        mlp_dim: int | None = None,
        attn_dim: int | None = None,
        vocab_size: int = 10000,
        learning_rate: float = 1e-3,
        iterations: int = 200,
        optimizer: str = "adam",
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        grad_clip: float | None = None,
        init_scale: float = 0.1,
        seed: int = 0,
        use_global_context: bool = True,
        beam: int = 1,
        max_len: int = 20,
    ):
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.mlp_dim = mlp_dim
        self.attn_dim = attn_dim
        self.vocab_size = vocab_size
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.optimizer = optimizer
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.init_scale = init_scale
        self.seed = seed
        self.use_global_context = use_global_context
        self.beam = beam
        self.max_len = max_len

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            grad_clip=self.grad_clip,
            seed=self.seed,
            optimizer=self.optimizer,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            init_scale=self.init_scale,
        )

    def _encode_batch(self, X, y):
        stories = [[encode(s, self.vocab_) for s in sents] for sents in y]
        return list(zip(X, stories))

    def fit(self, X, y):
        _check_features_list(X)
        if not isinstance(y, (list, tuple)) or len(y) != len(X):
            raise ShapeError(f"y must be a list of stories matching X, got {len(y) if y else 0}")
        n = X[0].num_images
        for sents in y:
            if len(sents) != n:
                raise ShapeError(
                    f"every story must have {n} sentences, got {len(sents)}"
                )
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must be at least 5, got {self.vocab_size}")

        samples = [
            StorySample(id=str(i), feature_ref="", sentences=list(sents))
            for i, sents in enumerate(y)
        ]
        self.vocab_ = build_vocab(samples, self.vocab_size)
        self.dims_ = ModelDims(
            global_dim=X[0].global_dim,
            local_dim=X[0].local_dim,
            num_regions=X[0].num_regions,
            hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim,
            vocab_size=self.vocab_.size,
            num_sentences=n,
            mlp_dim=self.mlp_dim if self.mlp_dim is not None else self.hidden_dim,
            attn_dim=self.attn_dim if self.attn_dim is not None else self.hidden_dim,
        )
        params = init_params(self.dims_, seed=self.seed, init_scale=self.init_scale)
        if not self.use_global_context:
            # Zero and freeze the encoder so h0 is 0 at fit and predict time.
            zeros = zero_params(self.dims_)
            params.encoder = zeros.encoder
        batch = self._encode_batch(X, y)
        self.params_, self.history_ = train(
            batch,
            params,
            self._train_config(),
            use_global_context=self.use_global_context,
            freeze_encoder=not self.use_global_context,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ConfigError("this StorySequenceGenerator instance is not fitted yet")

    def predict(self, X) -> list[list[str]]:
        """Decode one sentence per image for each feature sequence."""
        self._check_fitted()
        _check_features_list(X, self.dims_.num_sentences)
        out = []
        for feats in X:
            if self.beam == 1:
                ids = greedy_decode(feats, self.params_, self.max_len)
            else:
                ids = beam_decode(feats, self.params_, self.beam, self.max_len)
            out.append([decode(s, self.vocab_) for s in ids])
        return out

    def score(self, X, y) -> float:
        """Mean per-token log-likelihood (higher is better)."""
        self._check_fitted()
        _check_features_list(X, self.dims_.num_sentences)
        batch = self._encode_batch(X, y)
        return -loss(batch, self.params_, use_global_context=self.use_global_context)

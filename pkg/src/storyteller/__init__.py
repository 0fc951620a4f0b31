"""Sequential image description with a paralleled LSTM decoder.

A global-context MLP turns whole-sequence features into the shared
initial hidden state; per-image soft attention over local region
features feeds every LSTM gate; one decoder branch per image emits a
sentence. Training maximizes story log-likelihood with exact
hand-derived gradients; evaluation covers BLEU, ROUGE-L, and METEOR.
"""

from .attention import attention_scores, context_vector
from .corpus import (
    BOS,
    EOS,
    PAD,
    UNK,
    StorySample,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    load_manifest,
    load_vocab,
    save_manifest,
    save_vocab,
    tokenize,
)
from .decoder import (
    DecoderState,
    Hypothesis,
    beam_decode,
    greedy_decode,
    lstm_step,
    sentence_log_prob,
    step_logits,
    story_log_likelihood,
)
from .encoder import embed_global
from .errors import ConfigError, DataFormatError, ShapeError, StorytellerError
from .estimator import StorySequenceGenerator
from .features import (
    SequenceFeatures,
    SynthSpec,
    generate_synthetic,
    read_features,
    write_features,
)
from .metrics import MetricsReport, bleu, evaluate_corpus, lcs_length, meteor, rouge_l
from .numerics import affine, sigmoid, softmax, tanh_act
from .params import ModelDims, ModelParams, init_params, zero_params
from .trainer import (
    TrainConfig,
    grad_check,
    gradients,
    load_checkpoint,
    loss,
    save_checkpoint,
    step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BOS",
    "EOS",
    "PAD",
    "UNK",
    "ConfigError",
    "DataFormatError",
    "DecoderState",
    "Hypothesis",
    "MetricsReport",
    "ModelDims",
    "ModelParams",
    "SequenceFeatures",
    "ShapeError",
    "StorySample",
    "StorySequenceGenerator",
    "StorytellerError",
    "SynthSpec",
    "TrainConfig",
    "Vocabulary",
    "affine",
    "attention_scores",
    "beam_decode",
    "bleu",
    "build_vocab",
    "context_vector",
    "decode",
    "embed_global",
    "encode",
    "evaluate_corpus",
    "generate_synthetic",
    "grad_check",
    "gradients",
    "greedy_decode",
    "init_params",
    "lcs_length",
    "load_checkpoint",
    "load_manifest",
    "load_vocab",
    "loss",
    "lstm_step",
    "meteor",
    "read_features",
    "rouge_l",
    "save_checkpoint",
    "save_manifest",
    "save_vocab",
    "sentence_log_prob",
    "sigmoid",
    "softmax",
    "step",
    "step_logits",
    "story_log_likelihood",
    "tanh_act",
    "tokenize",
    "train",
    "write_features",
    "zero_params",
]

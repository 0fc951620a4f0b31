"""Command-line entry point.

Subcommands: build-vocab, synth, train, generate, evaluate, gradcheck.
Results go to stdout, progress and timing to stderr, so outputs are
pipeable and byte-stable for a fixed seed and inputs. Exit codes:
0 success, 1 usage error, 2 data or configuration error.

A JSON --config file supplies dimensions and training hyperparameters;
keys mirror RunConfig field names and command-line flags override file
values. STORY_DECODER_THREADS caps decode workers (default 1).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

from .corpus import (
    build_vocab,
    decode,
    encode,
    load_manifest,
    load_vocab,
    save_manifest,
    save_vocab,
)
from .decoder import beam_decode, greedy_decode
from .errors import ConfigError, StorytellerError
from .features import (
    SequenceFeatures,
    SynthSpec,
    generate_synthetic,
    read_features,
    write_features,
)
from .metrics import evaluate_corpus
from .params import ModelDims, ModelParams, init_params
from .trainer import (
    GRADCHECK_DIMS,
    TrainConfig,
    grad_check,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
)


@dataclass
class RunConfig:
    """Dimensions, training hyperparameters, and default paths."""

    global_dim: int = 4096
    local_dim: int = 512
    num_regions: int = 196
    hidden_dim: int = 512
    embed_dim: int = 512
    num_sentences: int = 5
    mlp_dim: int | None = None
    attn_dim: int | None = None
    vocab_size: int = 10000
    learning_rate: float = 1e-3
    iterations: int = 100
    grad_clip: float | None = None
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_scale: float = 0.1
    manifest: str | None = None
    features_dir: str | None = None
    vocab: str | None = None
    checkpoint: str | None = None

    def model_dims(self, vocab_size: int, feature_dims=None) -> ModelDims:
        """ModelDims with feature dimensions taken from data when given."""
        gd, ld, m = self.global_dim, self.local_dim, self.num_regions
        if feature_dims is not None:
            gd, ld, m = feature_dims
        return ModelDims(
            global_dim=gd,
            local_dim=ld,
            num_regions=m,
            hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim,
            vocab_size=vocab_size,
            num_sentences=self.num_sentences,
            mlp_dim=self.mlp_dim if self.mlp_dim is not None else self.hidden_dim,
            attn_dim=self.attn_dim if self.attn_dim is not None else self.hidden_dim,
        )

    def train_config(self) -> TrainConfig:
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


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus flag overrides."""
    values: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        for key, value in data.items():
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"config {path}: unknown key {key!r}")
            values[key] = value
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; the contract is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _decode_threads() -> int:
    raw = os.environ.get("STORY_DECODER_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"STORY_DECODER_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


def _load_dataset(cfg: RunConfig, need_sentences: bool = True):
    if cfg.manifest is None:
        raise ConfigError("a manifest path is required (--manifest or config)")
    if cfg.features_dir is None:
        raise ConfigError("a features directory is required (--features-dir or config)")
    samples = load_manifest(cfg.manifest, cfg.num_sentences if need_sentences else None)
    if not samples:
        raise ConfigError(f"manifest {cfg.manifest} contains no stories")
    feats = [read_features(os.path.join(cfg.features_dir, s.feature_ref)) for s in samples]
    return samples, feats


def _progress(total: int):
    every = max(1, total // 10)

    def log(it: int, value: float):
        if (it + 1) % every == 0 or it == 0:
            print(f"iter {it + 1}/{total} loss {value:.6f}", file=sys.stderr)

    return log


def _cmd_synth(args) -> int:
    cfg = load_run_config(args.config, {"seed": args.seed})
    spec = SynthSpec(
        num_stories=args.stories,
        num_topics=args.topics,
        objects_per_image=args.objects_per_image,
        noise_scale=args.noise_scale,
        seed=cfg.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    samples = []
    for sample, feats in generate_synthetic(
        spec,
        global_dim=cfg.global_dim,
        local_dim=cfg.local_dim,
        num_sentences=cfg.num_sentences,
    ):
        write_features(feats, os.path.join(args.out, sample.feature_ref))
        samples.append(sample)
    manifest_path = os.path.join(args.out, "manifest.jsonl")
    save_manifest(samples, manifest_path)
    print(json.dumps({"stories": len(samples), "manifest": manifest_path}))
    return 0


def _cmd_build_vocab(args) -> int:
    cfg = load_run_config(
        args.config,
        {"manifest": args.manifest, "vocab_size": args.vocab_size, "seed": args.seed},
    )
    if cfg.manifest is None:
        raise ConfigError("a manifest path is required (--manifest or config)")
    samples = load_manifest(cfg.manifest)
    vocab = build_vocab(samples, cfg.vocab_size)
    save_vocab(vocab, args.out)
    print(json.dumps({"size": vocab.size, "vocab": args.out}))
    return 0


def _cmd_train(args) -> int:
    cfg = load_run_config(
        args.config,
        {
            "manifest": args.manifest,
            "features_dir": args.features_dir,
            "vocab": args.vocab,
            "seed": args.seed,
            "iterations": args.iterations,
        },
    )
    if cfg.vocab is None:
        raise ConfigError("a vocabulary path is required (--vocab or config)")
    vocab = load_vocab(cfg.vocab)
    samples, feats = _load_dataset(cfg)
    dims = cfg.model_dims(
        vocab.size,
        feature_dims=(feats[0].global_dim, feats[0].local_dim, feats[0].num_regions),
    )
    batch = [
        (f, [encode(s, vocab) for s in sample.sentences])
        for f, sample in zip(feats, samples)
    ]
    params = init_params(dims, seed=cfg.seed, init_scale=cfg.init_scale)
    tc = cfg.train_config()
    params, history = train(batch, params, tc, progress=_progress(tc.iterations))
    save_checkpoint(params, dims, args.out)
    final = loss(batch, params)
    print(
        json.dumps(
            {
                "checkpoint": args.out,
                "iterations": tc.iterations,
                "initial_loss": history[0] if history else final,
                "final_loss": final,
            }
        )
    )
    return 0


def _load_model(args, cfg: RunConfig) -> tuple[ModelParams, ModelDims, object]:
    if args.model is None and cfg.checkpoint is None:
        raise ConfigError("a model checkpoint is required (--model or config)")
    params, dims = load_checkpoint(args.model or cfg.checkpoint)
    if cfg.vocab is None:
        raise ConfigError("a vocabulary path is required (--vocab or config)")
    vocab = load_vocab(cfg.vocab)
    if vocab.size != dims.vocab_size:
        raise ConfigError(
            f"config conflict: checkpoint was trained with vocabulary size "
            f"{dims.vocab_size} but {cfg.vocab} holds {vocab.size} tokens"
        )
    return params, dims, vocab


def _decode_stories(samples, feats, params, beam, max_len):
    threads = _decode_threads()

    def decode_one(f: SequenceFeatures):
        if beam == 1:
            return greedy_decode(f, params, max_len)
        return beam_decode(f, params, beam, max_len)

    if threads == 1:
        return [decode_one(f) for f in feats]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(decode_one, feats))


def _attention_trace(feats: SequenceFeatures, story_ids, params: ModelParams):
    """Replay a decoded story, collecting per-step attention weights."""
    from .corpus import BOS
    from .decoder import DecoderState, _step
    from .encoder import embed_global

    h0 = embed_global(feats.global_vec, params.encoder)
    trace = []
    for j, ids in enumerate(story_ids):
        state = DecoderState.initial(h0)
        x = params.decoder.embedding[BOS]
        steps = []
        for tok in ids:
            state, k = _step(feats.locals[j], state, x, params)
            steps.append(k)
            x = params.decoder.embedding[int(tok)]
        trace.append(steps)
    return trace


def _cmd_generate(args) -> int:
    cfg = load_run_config(
        args.config,
        {
            "manifest": args.manifest,
            "features_dir": args.features_dir,
            "vocab": args.vocab,
        },
    )
    params, dims, vocab = _load_model(args, cfg)
    cfg.num_sentences = dims.num_sentences
    samples, feats = _load_dataset(cfg)
    stories = _decode_stories(samples, feats, params, args.beam, args.max_len)
    dump = None
    if args.dump_attention is not None:
        dump = open(args.dump_attention, "w", encoding="utf-8")
    try:
        for sample, f, ids in zip(samples, feats, stories):
            for j, sent in enumerate(ids, start=1):
                print(f"{j}: {decode(sent, vocab)}")
            if dump is not None:
                for j, steps in enumerate(_attention_trace(f, ids, params), start=1):
                    for t, k in enumerate(steps, start=1):
                        dump.write(
                            json.dumps(
                                {"story": sample.id, "branch": j, "t": t, "k": k.tolist()}
                            )
                        )
                        dump.write("\n")
    finally:
        if dump is not None:
            dump.close()
    return 0


def _cmd_evaluate(args) -> int:
    cfg = load_run_config(
        args.config,
        {
            "manifest": args.manifest,
            "features_dir": args.features_dir,
            "vocab": args.vocab,
        },
    )
    wanted = set()
    for name in args.metrics.split(","):
        name = name.strip()
        if name not in ("bleu", "rouge", "meteor"):
            raise ConfigError(f"unknown metric {name!r}; choose from bleu,rouge,meteor")
        wanted.add(name)
    params, dims, vocab = _load_model(args, cfg)
    cfg.num_sentences = dims.num_sentences
    samples, feats = _load_dataset(cfg)
    stories = _decode_stories(samples, feats, params, args.beam, args.max_len)
    outputs = [[decode(sent, vocab) for sent in ids] for ids in stories]
    report = evaluate_corpus(outputs, samples, pairing=args.pairing)
    payload = report.to_dict()
    if "bleu" not in wanted:
        payload.pop("bleu")
        payload.pop("bleu4")
    if "rouge" not in wanted:
        payload.pop("rouge_l")
    if "meteor" not in wanted:
        payload.pop("meteor")
    text = json.dumps(payload)
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.write("\n")
    print(text)
    return 0


def _cmd_gradcheck(args) -> int:
    if args.config is not None:
        cfg = load_run_config(args.config, {"seed": args.seed})
        dims = cfg.model_dims(cfg.vocab_size)
        seed = cfg.seed
    else:
        dims = GRADCHECK_DIMS
        seed = args.seed if args.seed is not None else 0
    err = grad_check(dims, seed=seed)
    print(f"max relative error {err:.6e}")
    return 0 if err < 1e-4 else 2


def build_parser() -> _Parser:
    parser = _Parser(prog="storyteller", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p, model=False):
        p.add_argument("--config", help="JSON config file; keys mirror RunConfig")
        p.add_argument("--seed", type=int, default=None, help="random seed override")
        p.add_argument("--manifest", help="dataset manifest (JSON Lines)")
        p.add_argument("--features-dir", dest="features_dir", help="directory of .seqf files")
        p.add_argument("--vocab", help="vocabulary JSON file")
        if model:
            p.add_argument("--model", help="model checkpoint path")
            p.add_argument("--beam", type=int, default=1, help="beam width (1 = greedy)")
            p.add_argument("--max-len", dest="max_len", type=int, default=20,
                           help="maximum tokens per sentence")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stories", type=int, default=100)
    p.add_argument("--topics", type=int, default=2)
    p.add_argument("--objects-per-image", dest="objects_per_image", type=int, default=4)
    p.add_argument("--noise-scale", dest="noise_scale", type=float, default=0.1)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("build-vocab", help="build a vocabulary from a manifest")
    common(p)
    p.add_argument("--out", required=True, help="output vocabulary JSON path")
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=None)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train", help="train a model on a manifest")
    common(p)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--iterations", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="decode stories for a manifest")
    common(p, model=True)
    p.add_argument("--dump-attention", dest="dump_attention",
                   help="write per-step attention weights to this JSON Lines file")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("evaluate", help="score generated stories against references")
    common(p, model=True)
    p.add_argument("--metrics", default="bleu,rouge,meteor",
                   help="comma-separated subset of bleu,rouge,meteor")
    p.add_argument("--pairing", choices=("sentence", "story"), default="sentence")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("gradcheck", help="compare analytic and numeric gradients")
    p.add_argument("--config", help="JSON config file; defaults to the small check dims")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except StorytellerError as exc:
        print(f"storyteller: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"storyteller: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

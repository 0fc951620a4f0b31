import json
import os

import numpy as np
import pytest

from storyteller.cli import main

SMALL_CONFIG = {
    "global_dim": 6,
    "local_dim": 4,
    "num_regions": 3,
    "hidden_dim": 8,
    "embed_dim": 8,
    "num_sentences": 2,
    "vocab_size": 40,
    "learning_rate": 3e-3,
    "iterations": 40,
    "seed": 0,
}


@pytest.fixture
def workspace(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps(SMALL_CONFIG))
    data = tmp_path / "data"
    assert (
        main(
            [
                "synth",
                "--config",
                str(config),
                "--out",
                str(data),
                "--stories",
                "5",
                "--topics",
                "2",
                "--objects-per-image",
                "3",
                "--noise-scale",
                "0.1",
                "--seed",
                "5",
            ]
        )
        == 0
    )
    vocab = tmp_path / "vocab.json"
    assert (
        main(
            [
                "build-vocab",
                "--config",
                str(config),
                "--manifest",
                str(data / "manifest.jsonl"),
                "--out",
                str(vocab),
            ]
        )
        == 0
    )
    model = tmp_path / "model.ckpt"
    assert (
        main(
            [
                "train",
                "--config",
                str(config),
                "--manifest",
                str(data / "manifest.jsonl"),
                "--features-dir",
                str(data),
                "--vocab",
                str(vocab),
                "--out",
                str(model),
            ]
        )
        == 0
    )
    return {
        "config": config,
        "manifest": data / "manifest.jsonl",
        "features": data,
        "vocab": vocab,
        "model": model,
        "tmp": tmp_path,
    }


def generate_args(ws, *extra):
    return [
        "generate",
        "--model",
        str(ws["model"]),
        "--manifest",
        str(ws["manifest"]),
        "--features-dir",
        str(ws["features"]),
        "--vocab",
        str(ws["vocab"]),
        *extra,
    ]


class TestPipeline:
    def test_synth_writes_features_and_manifest(self, workspace):
        listing = sorted(os.listdir(workspace["features"]))
        assert "manifest.jsonl" in listing
        assert sum(name.endswith(".seqf") for name in listing) == 5

    def test_synth_byte_identical_across_runs(self, workspace):
        args = [
            "synth",
            "--config",
            str(workspace["config"]),
            "--stories",
            "4",
            "--seed",
            "7",
        ]
        out_a = workspace["tmp"] / "runA"
        out_b = workspace["tmp"] / "runB"
        assert main(args + ["--out", str(out_a)]) == 0
        assert main(args + ["--out", str(out_b)]) == 0
        for name in sorted(os.listdir(out_a)):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_train_reports_losses(self, workspace, capsys):
        # train already ran in the fixture; retrain to capture stdout
        code = main(
            [
                "train",
                "--config",
                str(workspace["config"]),
                "--manifest",
                str(workspace["manifest"]),
                "--features-dir",
                str(workspace["features"]),
                "--vocab",
                str(workspace["vocab"]),
                "--out",
                str(workspace["tmp"] / "model2.ckpt"),
            ]
        )
        captured = capsys.readouterr()
        assert code == 0
        payload = json.loads(captured.out.strip().splitlines()[-1])
        assert payload["final_loss"] < payload["initial_loss"]

    def test_generate_prints_numbered_sentences(self, workspace, capsys):
        assert main(generate_args(workspace)) == 0
        out = capsys.readouterr().out
        lines = out.splitlines()
        assert len(lines) == 10  # 5 stories x 2 sentences
        for i, line in enumerate(lines):
            assert line.startswith(f"{i % 2 + 1}:")

    def test_generate_deterministic_and_beam_one_is_greedy(self, workspace, capsys):
        assert main(generate_args(workspace)) == 0
        first = capsys.readouterr().out
        assert main(generate_args(workspace)) == 0
        second = capsys.readouterr().out
        assert main(generate_args(workspace, "--beam", "1")) == 0
        beamed = capsys.readouterr().out
        assert first == second == beamed

    def test_generate_threads_do_not_change_output(self, workspace, capsys, monkeypatch):
        assert main(generate_args(workspace)) == 0
        single = capsys.readouterr().out
        monkeypatch.setenv("STORY_DECODER_THREADS", "3")
        assert main(generate_args(workspace)) == 0
        threaded = capsys.readouterr().out
        assert single == threaded

    def test_dump_attention_rows(self, workspace, capsys):
        dump = workspace["tmp"] / "attn.jsonl"
        assert main(generate_args(workspace, "--dump-attention", str(dump))) == 0
        capsys.readouterr()
        rows = [json.loads(line) for line in dump.read_text().splitlines()]
        assert rows, "attention dump should not be empty"
        for row in rows:
            assert {"story", "branch", "t", "k"} <= set(row)
            weights = np.asarray(row["k"])
            assert weights.shape == (3,)
            assert abs(weights.sum() - 1.0) < 1e-9

    def test_evaluate_report(self, workspace, capsys):
        report_path = workspace["tmp"] / "report.json"
        code = main(
            [
                "evaluate",
                "--model",
                str(workspace["model"]),
                "--manifest",
                str(workspace["manifest"]),
                "--features-dir",
                str(workspace["features"]),
                "--vocab",
                str(workspace["vocab"]),
                "--out",
                str(report_path),
            ]
        )
        out = capsys.readouterr().out
        assert code == 0
        payload = json.loads(out)
        assert set(payload) == {"bleu", "bleu4", "rouge_l", "meteor", "pairs"}
        assert payload["pairs"] == 10
        assert json.loads(report_path.read_text()) == payload

    def test_evaluate_metric_subset(self, workspace, capsys):
        code = main(
            [
                "evaluate",
                "--model",
                str(workspace["model"]),
                "--manifest",
                str(workspace["manifest"]),
                "--features-dir",
                str(workspace["features"]),
                "--vocab",
                str(workspace["vocab"]),
                "--metrics",
                "rouge",
            ]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert set(json.loads(out)) == {"rouge_l", "pairs"}

    def test_evaluate_story_pairing(self, workspace, capsys):
        code = main(
            [
                "evaluate",
                "--model",
                str(workspace["model"]),
                "--manifest",
                str(workspace["manifest"]),
                "--features-dir",
                str(workspace["features"]),
                "--vocab",
                str(workspace["vocab"]),
                "--pairing",
                "story",
            ]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert json.loads(out)["pairs"] == 5


class TestGradcheckCommand:
    def test_prints_error_and_exits_zero(self, capsys):
        assert main(["gradcheck", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "max relative error" in out
        assert float(out.strip().split()[-1]) < 1e-4


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_no_subcommand_is_usage_error(self):
        assert main([]) == 1

    def test_bad_flag_is_usage_error(self, capsys):
        assert main(["generate", "--no-such-flag"]) == 1

    def test_missing_manifest_is_data_error(self, workspace, capsys):
        code = main(
            [
                "train",
                "--config",
                str(workspace["config"]),
                "--manifest",
                str(workspace["tmp"] / "missing.jsonl"),
                "--features-dir",
                str(workspace["features"]),
                "--vocab",
                str(workspace["vocab"]),
                "--out",
                str(workspace["tmp"] / "m.ckpt"),
            ]
        )
        err = capsys.readouterr().err
        assert code == 2
        assert "missing.jsonl" in err

    def test_vocab_conflict_is_config_error(self, workspace, capsys):
        small = workspace["tmp"] / "small_vocab.json"
        small.write_text('{"version": 1, "tokens": ["only"]}')
        code = main(generate_args(workspace)[:-1] + [str(small)])
        err = capsys.readouterr().err
        assert code == 2
        assert "conflict" in err

    def test_unknown_config_key_is_config_error(self, workspace, capsys):
        bad = workspace["tmp"] / "bad_config.json"
        bad.write_text('{"no_such_key": 1}')
        assert main(["gradcheck", "--config", str(bad)]) == 2

    def test_unknown_metric_is_config_error(self, workspace, capsys):
        code = main(
            [
                "evaluate",
                "--model",
                str(workspace["model"]),
                "--manifest",
                str(workspace["manifest"]),
                "--features-dir",
                str(workspace["features"]),
                "--vocab",
                str(workspace["vocab"]),
                "--metrics",
                "cider",
            ]
        )
        assert code == 2

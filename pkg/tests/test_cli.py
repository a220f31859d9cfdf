import json
import subprocess
import sys
from pathlib import Path

import pytest

from leanpremise.cli import main


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.jsonl"
    assert run_cli("make-synthetic", "--out", path, "--premises", 20, "--steps", 12, "--seed", 3) == 0
    return path


class TestDispatch:
    def test_help_exits_zero(self):
        proc = subprocess.run(
            [sys.executable, "-m", "leanpremise.cli", "--help"], capture_output=True
        )
        assert proc.returncode == 0
        assert b"train-tokenizer" in proc.stdout

    def test_unknown_subcommand_exits_two(self):
        proc = subprocess.run(
            [sys.executable, "-m", "leanpremise.cli", "frobnicate"], capture_output=True
        )
        assert proc.returncode == 2

    def test_runtime_error_exits_one(self, tmp_path):
        rc = run_cli("ingest", "--in", tmp_path / "missing.jsonl", "--out", tmp_path / "o")
        assert rc == 1


class TestIngestAndSplit:
    def test_ingest_artifacts(self, synth_corpus, tmp_path):
        out = tmp_path / "ingested"
        assert run_cli("ingest", "--in", synth_corpus, "--out", out) == 0
        manifest = json.loads((out / "ingest_manifest.json").read_text())
        assert manifest["counts"]["premises"] == 20
        assert manifest["counts"]["proofs"] == 12
        assert (out / "corpus.jsonl").exists()

    def test_split_deterministic_bytes(self, synth_corpus, tmp_path):
        outs = []
        for name in ("s1", "s2"):
            out = tmp_path / name
            rc = run_cli(
                "split", "--data", synth_corpus, "--out", out,
                "--strategy", "RI", "--seed", 7, "--n-val", 2, "--n-test", 2,
            )
            assert rc == 0
            outs.append(out)
        for f in ("train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"):
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()

    def test_env_layer_overrides_default(self, synth_corpus, tmp_path, monkeypatch):
        monkeypatch.setenv("LEANPREMISE_SEED", "21")
        out = tmp_path / "env_split"
        assert run_cli("split", "--data", synth_corpus, "--out", out,
                       "--strategy", "RD", "--n-val", 1, "--n-test", 1) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 21

    def test_flag_beats_env(self, synth_corpus, tmp_path, monkeypatch):
        monkeypatch.setenv("LEANPREMISE_SEED", "21")
        out = tmp_path / "flag_split"
        assert run_cli("split", "--data", synth_corpus, "--out", out,
                       "--strategy", "RD", "--seed", 5, "--n-val", 1, "--n-test", 1) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 5


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory, synth_corpus):
    """Tiny end-to-end artifact chain shared by the CLI tests."""
    root = tmp_path_factory.mktemp("pipeline")
    split_dir = root / "split"
    vocab = root / "vocab.txt"
    enc_cfg = root / "encoder.json"
    enc_cfg.write_text(json.dumps({
        "encoder": {"n_layers": 1, "n_heads": 2, "hidden": 16,
                     "intermediate": 32, "max_positions": 64, "dropout": 0.0}
    }))
    pre = root / "pre.ckpt"
    retr = root / "retr.ckpt"
    index = root / "premises.idx"
    assert run_cli("split", "--data", synth_corpus, "--out", split_dir,
                   "--strategy", "RD", "--seed", 1, "--n-val", 2, "--n-test", 2) == 0
    assert run_cli("train-tokenizer", "--corpus", synth_corpus,
                   "--vocab-size", 256, "--min-freq", 1, "--out", vocab) == 0
    assert run_cli("pretrain", "--corpus", synth_corpus, "--vocab", vocab,
                   "--config", enc_cfg, "--steps", 4, "--batch-size", 4,
                   "--lr", "1e-4", "--seed", 0, "--out", pre) == 0
    assert run_cli("train-retriever", "--corpus", synth_corpus, "--split", split_dir,
                   "--vocab", vocab, "--init", pre, "--batch-size", 4,
                   "--epochs", 1, "--seed", 0, "--lr", "1e-4", "--out", retr) == 0
    assert run_cli("embed-corpus", "--corpus", synth_corpus, "--vocab", vocab,
                   "--ckpt", retr, "--mode", "fine", "--out", index) == 0
    return {"root": root, "split": split_dir, "vocab": vocab, "pre": pre,
            "retr": retr, "index": index, "corpus": synth_corpus}


class TestPipeline:
    def test_artifacts_exist(self, pipeline_dir):
        assert Path(pipeline_dir["retr"]).exists()
        assert Path(str(pipeline_dir["retr"]) + ".losses.json").exists()
        assert Path(pipeline_dir["index"]).exists()
        assert Path(str(pipeline_dir["index"]) + ".ids.json").exists()

    def test_search_returns_results(self, pipeline_dir, tmp_path, capsys):
        state_file = tmp_path / "state.txt"
        state_file.write_text("<VAR> x : R uq003 <GOAL> T uq003")
        rc = run_cli("search", "--corpus", pipeline_dir["corpus"],
                     "--vocab", pipeline_dir["vocab"], "--ckpt", pipeline_dir["retr"],
                     "--index", pipeline_dir["index"], "--state-file", state_file, "--k", 5)
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert len(out["results"]) == 5
        scores = [r["cfr_score"] for r in out["results"]]
        assert scores == sorted(scores, reverse=True)

    def test_search_wrong_mode_flag(self, pipeline_dir, tmp_path):
        state_file = tmp_path / "state.txt"
        state_file.write_text("<GOAL> T")
        rc = run_cli("search", "--corpus", pipeline_dir["corpus"],
                     "--vocab", pipeline_dir["vocab"], "--ckpt", pipeline_dir["retr"],
                     "--index", pipeline_dir["index"], "--state-file", state_file,
                     "--k", 2, "--mode", "conv")
        assert rc == 1

    def test_evaluate_report(self, pipeline_dir, tmp_path):
        out = tmp_path / "report.json"
        rc = run_cli("evaluate", "--corpus", pipeline_dir["corpus"],
                     "--split-dir", pipeline_dir["split"], "--split", "test",
                     "--vocab", pipeline_dir["vocab"], "--ckpt", pipeline_dir["retr"],
                     "--index", pipeline_dir["index"], "--ks", "1,5", "--out", out)
        assert rc == 0
        report = json.loads(out.read_text())
        assert set(report["metrics"]) == {"1", "5"}
        for m in report["metrics"].values():
            for v in m.values():
                assert 0.0 <= v <= 1.0
        assert Path(str(out) + ".csv").exists()

    def test_perturb_then_evaluate(self, pipeline_dir, tmp_path):
        pairs = tmp_path / "perturbed.jsonl"
        rc = run_cli("perturb", "--corpus", pipeline_dir["corpus"],
                     "--split-dir", pipeline_dir["split"], "--kind", "shuffle",
                     "--ratio", "1.0", "--seed", 3, "--out", pairs)
        assert rc == 0
        assert pairs.exists() and pairs.read_text().strip()
        out = tmp_path / "report2.json"
        rc = run_cli("evaluate", "--corpus", pipeline_dir["corpus"],
                     "--split-dir", pipeline_dir["split"], "--pairs", pairs,
                     "--vocab", pipeline_dir["vocab"], "--ckpt", pipeline_dir["retr"],
                     "--index", pipeline_dir["index"], "--ks", "1", "--out", out)
        assert rc == 0

    def test_ablation_axes_run_end_to_end(self, pipeline_dir, tmp_path):
        # pretrain off (steps=0 writes the raw initialization) x conventional
        # similarity: the four-way ablation grid stays executable
        raw = tmp_path / "raw.ckpt"
        assert run_cli("pretrain", "--corpus", pipeline_dir["corpus"],
                       "--vocab", pipeline_dir["vocab"], "--steps", 0,
                       "--seed", 0, "--out", raw) == 0
        retr = tmp_path / "conv.ckpt"
        assert run_cli("train-retriever", "--corpus", pipeline_dir["corpus"],
                       "--split", pipeline_dir["split"], "--vocab", pipeline_dir["vocab"],
                       "--init", raw, "--mode", "conv", "--batch-size", 4,
                       "--epochs", 1, "--seed", 0, "--lr", "1e-4", "--out", retr) == 0
        index = tmp_path / "conv.idx"
        assert run_cli("embed-corpus", "--corpus", pipeline_dir["corpus"],
                       "--vocab", pipeline_dir["vocab"], "--ckpt", retr,
                       "--mode", "conv", "--out", index) == 0

    def test_pretrain_deterministic_checkpoints(self, pipeline_dir, tmp_path):
        outs = []
        for name in ("d1.ckpt", "d2.ckpt"):
            out = tmp_path / name
            rc = run_cli("pretrain", "--corpus", pipeline_dir["corpus"],
                         "--vocab", pipeline_dir["vocab"],
                         "--steps", 3, "--batch-size", 4, "--lr", "1e-4",
                         "--seed", 9, "--out", out)
            assert rc == 0
            outs.append(out)
        assert outs[0].read_bytes() == outs[1].read_bytes()

import json
import subprocess
import sys

import numpy as np
import pytest

from dualview.cli import run
from dualview.data import read_dataset

SMALL = ["--set", "local_heads=2", "--set", "global_dim=8", "--set", "global_heads=2",
         "--set", "local_layers=1", "--set", "global_layers=1", "--set", "local_mlp_hidden=8",
         "--set", "global_mlp_hidden=8", "--set", "gate_hidden=4"]


@pytest.fixture
def synth(tmp_path):
    def make(name, n=12, seed=1, extra=()):
        path = tmp_path / name
        code = run(["gen-synth", "--mode", "complementary_pair", "--n-queries", str(n),
                    "--n-candidates", "4", "--embed-dim", "8", "--noise-sigma", "0.1",
                    "--seed", str(seed), "--out", str(path), *extra])
        assert code == 0
        return path
    return make


@pytest.fixture
def trained(tmp_path, synth):
    train_path, val_path = synth("train.jsonl", seed=1), synth("val.jsonl", seed=2)
    ckpt = tmp_path / "model.ckpt"
    code = run(["train", "--train", str(train_path), "--val", str(val_path), "--out", str(ckpt),
                "--epochs", "1", "--batch-size", "4", "--lr", "1e-3", "--log",
                str(tmp_path / "log.jsonl"), *SMALL])
    assert code == 0
    return ckpt, val_path


def test_gen_synth_is_reproducible(synth):
    a, b = synth("a.jsonl", seed=5), synth("b.jsonl", seed=5)
    assert a.read_bytes() == b.read_bytes()
    assert len(read_dataset(a)) == 12


def test_seed_from_environment(tmp_path, monkeypatch):
    outs = []
    for name in ("a", "b"):
        monkeypatch.setenv("DUALVIEW_SEED", "9")
        path = tmp_path / f"{name}.jsonl"
        assert run(["gen-synth", "--n-queries", "3", "--embed-dim", "8", "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    monkeypatch.setenv("DUALVIEW_SEED", "nine")
    assert run(["gen-synth", "--n-queries", "3", "--out", str(tmp_path / "c.jsonl")]) == 1


def test_binary_cache_output(synth):
    path = synth("a.dvrk")
    assert path.read_bytes().startswith(b"DVRK1")


def test_eval_baseline_json(synth, capsys):
    data = synth("eval.jsonl")
    assert run(["eval", "--baseline", "cosine", "--data", str(data), "--format", "json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_queries"] == 12 and 0 <= report["full_hit_at_k"] <= 1


def test_train_rerank_eval_ablate(trained, tmp_path, capsys):
    ckpt, data = trained
    log_lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert all("loss" in json.loads(line) for line in log_lines)

    assert run(["rerank", "--model", str(ckpt), "--data", str(data)]) == 0
    rows = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert len(rows) == 12
    assert set(rows[0]["scores"][0]) == {"doc_id", "s_local", "s_global", "gate", "s_fused"}

    assert run(["eval", "--model", str(ckpt), "--data", str(data)]) == 0
    assert "FH@4" in capsys.readouterr().out

    out = tmp_path / "ablate.json"
    assert run(["ablate", "--model", str(ckpt), "--data", str(data), "--format", "json",
                "--out", str(out)]) == 0
    labels = [r["label"] for r in json.loads(out.read_text())]
    assert labels == ["full", "avg_fusion", "no_global", "no_local", "cosine"]


def test_ablate_needs_model_or_train(synth, capsys):
    assert run(["ablate", "--data", str(synth("a.jsonl"))]) == 1
    err = json.loads(capsys.readouterr().err.splitlines()[-1])
    assert err["exit_code"] == 1 and "--model" in err["message"]


def test_mine_negatives(tmp_path, rng):
    np.save(tmp_path / "g.npy", rng.standard_normal((3, 8)))
    np.save(tmp_path / "p.npy", rng.standard_normal((10, 8)))
    assert run(["mine-negatives", "--gold-pool", str(tmp_path / "g.npy"), "--distractor-pool",
                str(tmp_path / "p.npy"), "--k", "4", "--out", str(tmp_path / "m.json")]) == 0
    mined = json.loads((tmp_path / "m.json").read_text())
    assert np.array(mined["indices"]).shape == (3, 4)


def test_bench_small(trained, capsys):
    ckpt, data = trained
    assert run(["bench", "--model", str(ckpt), "--data", str(data), "--warmup", "2",
                "--iters", "20", "--format", "json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["qps"] == pytest.approx(1000 / report["mean_ms"])
    assert run(["bench", "--model", str(ckpt), "--data", str(data), "--iters", "5"]) == 1


class TestExitCodes:
    def test_help(self, capsys):
        assert run(["--help"]) == 0
        assert "gen-synth" in capsys.readouterr().out

    def test_unknown_flag(self):
        assert run(["eval", "--bogus"]) == 1

    def test_unknown_set_key(self, synth):
        assert run(["eval", "--baseline", "cosine", "--data", str(synth("a.jsonl")),
                    "--set", "nonsense=1"]) == 1

    def test_missing_file_is_data_error(self, tmp_path, capsys):
        assert run(["eval", "--baseline", "cosine", "--data", str(tmp_path / "nope.jsonl")]) == 2
        assert json.loads(capsys.readouterr().err.splitlines()[-1])["exit_code"] == 2

    def test_malformed_file_is_data_error(self, tmp_path, capsys):
        (tmp_path / "bad.jsonl").write_text("{oops\n")
        assert run(["eval", "--baseline", "cosine", "--data", str(tmp_path / "bad.jsonl")]) == 2
        assert "line 1" in capsys.readouterr().err

    def test_bad_config_is_usage_error(self, synth):
        assert run(["train", "--train", str(synth("a.jsonl")), "--out", "x.ckpt",
                    "--set", "local_heads=3"]) == 1

    def test_non_finite_embedding_is_data_error(self, synth):
        path = synth("a.jsonl")
        sets = read_dataset(path)
        path.write_text(path.read_text().replace(str(sets[0].query_embedding[0]), "NaN", 1))
        assert run(["eval", "--baseline", "cosine", "--data", str(path)]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_numerical_error(self, synth, tmp_path, capsys):
        code = run(["train", "--train", str(synth("a.jsonl")), "--out", str(tmp_path / "m.ckpt"),
                    "--epochs", "3", "--batch-size", "4", "--lr", "1e30",
                    "--set", "warmup_fraction=0", *SMALL])
        assert code == 3
        assert "non-finite" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dualview", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "bench" in proc.stdout

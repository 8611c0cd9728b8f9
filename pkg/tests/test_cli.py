import csv
import hashlib
import json

import pytest

from syfar import cli
from syfar.config import load_config
from syfar.exceptions import ConfigError, NumericError
from syfar.nn import Model, load_checkpoint

TINY = {
    "data": {"k": 4, "dims": 16, "samples_per_class": 30, "image_shape": [4, 4], "seed": 1},
    "model": {"hidden_sizes": [8]},
    "attack": {"family": "pgd-linf", "epsilon": 0.1, "step_size": 0.03, "iterations": 2},
    "train": {"epochs": 2, "batch_size": 32},
    "study": {"seeds": [0, 1], "arms": ["none", "symmetry"]},
    "bench": {"epochs": 2, "batch_size": 64, "arms": ["none", "symmetry"]},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(TINY))
    (tmp_path / "halves.json").write_text(json.dumps({"name": "halves",
                                                      "groups": {"a": [0, 1], "b": [2, 3]}}))
    return path


def _run(*argv):
    return cli.main([*map(str, argv), "--quiet"])


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(out):
    m = json.loads((out / "manifest.json").read_text())
    for rel in m["artifacts"]:
        assert (out / rel).exists(), rel
    return m


def _train(config, out, *extra):
    assert _run("train", "--config", config, "--out-dir", out, *extra) == 0
    return out / "checkpoint.json"


def test_train_artifacts(config, tmp_path):
    out = tmp_path / "train"
    _train(config, out, "--seed", 3)
    m = _manifest(out)
    assert {"config.json", "checkpoint.json", "epochs.csv", "manifest.json"} <= set(m["artifacts"])
    assert m["seeds"] == [3] and m["command"] == "train" and m["config_hash"]
    assert m["checkpoint_sha256"] == load_checkpoint(out / "checkpoint.json").digest()
    rows = list(csv.DictReader(open(out / "epochs.csv")))
    assert len(rows) == 2 and rows[0]["val_robust_accuracy"] != ""


def test_zero_epochs_checkpoint_is_initialization(config, tmp_path):
    ck = _train(config, tmp_path / "t", "--epochs", 0, "--seed", 5)
    assert load_checkpoint(ck).digest() == Model.initialize(16, (8,), 4, seed=5).digest()


def test_rerun_is_byte_identical(config, tmp_path):
    a = _train(config, tmp_path / "a", "--seed", 2)
    b = _train(config, tmp_path / "b", "--seed", 2)
    assert _sha(a) == _sha(b)
    strip = lambda p: [{k: v for k, v in r.items() if k != "seconds"} for r in csv.DictReader(open(p))]
    assert strip(a.parent / "epochs.csv") == strip(b.parent / "epochs.csv")
    c = _train(config, tmp_path / "c", "--seed", 4)
    assert _sha(a) != _sha(c)


def test_fine_tune_from_checkpoint(config, tmp_path):
    ck = _train(config, tmp_path / "pre")
    assert _run("train", "--config", config, "--out-dir", tmp_path / "ft", "--checkpoint", ck,
                "--epochs", 0) == 0
    assert _sha(tmp_path / "ft" / "checkpoint.json") == _sha(ck)


def test_evaluate_artifacts(config, tmp_path):
    ck = _train(config, tmp_path / "t")
    out = tmp_path / "e"
    assert _run("evaluate", "--config", config, "--checkpoint", ck, "--out-dir", out,
                "--partition", tmp_path / "halves.json") == 0
    m = _manifest(out)
    for name in ("report.json", "robust_confusion.json", "benign_confusion.json",
                 "robust_confusion.tsv", "asymmetry.tsv", "per_class.csv", "target_shares.csv",
                 "subgroups.json"):
        assert name in m["artifacts"]
    sub = json.loads((out / "subgroups.json").read_text())[0]
    assert sub["name"] == "halves" and "robust_gap" in json.dumps(sub)
    report = json.loads((out / "report.json").read_text())
    assert 0 <= report["robust_accuracy"] <= 1
    first = _sha(out / "report.json")
    _run("evaluate", "--config", config, "--checkpoint", ck, "--out-dir", out,
         "--partition", tmp_path / "halves.json")
    assert _sha(out / "report.json") == first


def test_study_outputs(config, tmp_path):
    out = tmp_path / "s"
    assert _run("study", "--config", config, "--out-dir", out) == 0
    m = _manifest(out)
    assert m["seeds"] == [0, 1]
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert [(r["seed"], r["arm"]) for r in rows] == [("0", "none"), ("0", "symmetry"),
                                                     ("1", "none"), ("1", "symmetry")]
    assert all(r["status"] == "ok" for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["arms"]) == {"none", "symmetry"} and summary["failures"] == []
    assert (out / "run01_seed1" / "symmetry" / "report.json").exists()
    assert (out / "comparison.csv").exists()


def test_study_seed_flag_and_single_seed(config, tmp_path):
    assert _run("study", "--config", config, "--out-dir", tmp_path / "s", "--seed", 7,
                "--arms", "none") == 0
    assert _manifest(tmp_path / "s")["seeds"] == [7, 8]
    assert _run("study", "--config", config, "--out-dir", tmp_path / "x", "--seeds", "3") == 2


def test_bench_outputs(config, tmp_path):
    out = tmp_path / "b"
    assert _run("bench", "--config", config, "--out-dir", out) == 0
    s = json.loads((out / "bench_summary.json").read_text())
    assert set(s["overhead_vs_none"]) == {"symmetry"} and s["overhead_vs_none"]["symmetry"] > 0
    assert len(list(csv.DictReader(open(out / "bench.csv")))) == 4


def test_verify_theorem(config, tmp_path, monkeypatch):
    out = tmp_path / "v"
    assert _run("verify-theorem", "--out-dir", out, "--trials", 50) == 0
    assert json.loads((out / "theorem.json").read_text())["passed"] is True
    ck = _train(config, tmp_path / "t")
    _run("evaluate", "--config", config, "--checkpoint", ck, "--out-dir", tmp_path / "e")
    assert _run("verify-theorem", "--out-dir", out, "--matrix", tmp_path / "e" / "report.json",
                "--partition", tmp_path / "halves.json") == 0
    res = json.loads((out / "theorem.json").read_text())
    assert res["partitions"][0]["name"] == "halves"
    monkeypatch.setattr(cli, "theorem_suite", lambda **kw: {"passed": False})
    assert _run("verify-theorem", "--out-dir", out) == 1


def test_gen_data_and_env_root(config, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ROOT_ENV, str(tmp_path / "root"))
    assert _run("gen-data", "--config", config) == 0
    out = tmp_path / "root" / "gen-data"
    m = _manifest(out)
    assert {"data.csv", "splits.json", "class_counts.json"} <= set(m["artifacts"])
    counts = json.loads((out / "class_counts.json").read_text())
    assert counts["train"] == [24] * 4 and counts["test"] == [3] * 4


def test_precedence(config):
    assert load_config()["train"]["epochs"] == 5
    assert load_config(config)["train"]["epochs"] == 2
    args = cli.build_parser().parse_args(["train", "--config", str(config), "--epochs", "1",
                                          "--set", "train.epochs=4"])
    cfg = load_config(args.config, cli._flag_overrides(args))
    assert cfg["train"]["epochs"] == 1
    args = cli.build_parser().parse_args(["train", "--set", "train.epochs=4"])
    assert load_config(None, cli._flag_overrides(args))["train"]["epochs"] == 4


def test_exit_codes(config, tmp_path, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"epochz": 1}}))
    assert _run("train", "--config", bad, "--out-dir", tmp_path / "o") == 2
    bad.write_text("{not json")
    assert _run("train", "--config", bad, "--out-dir", tmp_path / "o") == 2
    assert _run("evaluate", "--config", config, "--checkpoint", tmp_path / "missing.json",
                "--out-dir", tmp_path / "o") == 3

    def boom(*a, **k):
        raise NumericError("loss diverged")

    monkeypatch.setattr(cli, "cmd_train", boom)
    assert _run("train", "--config", config, "--out-dir", tmp_path / "o") == 4


def test_parse_seeds():
    assert cli.parse_seeds("0-2,7, 3") == [0, 1, 2, 7, 3]
    with pytest.raises(ConfigError):
        cli.parse_seeds("a-b")


def test_train_config_accepts_attack_override():
    from syfar.attacks import AttackSpec

    spec = AttackSpec(iterations=1)
    assert load_config().train_config(0, attack=spec).attack is spec

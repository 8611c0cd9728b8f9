"""Acceptance suite: one PASS/FAIL line per criterion in the terminal summary.

The paired study over the shipped sibling dataset runs once per session and
feeds the directional, target-fairness and stability checks.
"""
import csv
import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import (bell_triangle, central_difference, loop_argmax, loop_max_asymmetry,
                     loop_source_metrics, loop_target_shares, random_row_stochastic, rel_error)
from syfar import cli
from syfar.attacks import AttackSpec, attack_success_rate, attack_targets, masked_patch_attack, pgd_linf
from syfar.config import load_config
from syfar.confusion import ConfusionMatrix
from syfar.metrics import STABILITY_METRICS, max_asymmetry_gap, source_class_metrics, target_shares
from syfar.nn import Model
from syfar.spectral import spectral_penalty, spectral_penalty_gradient
from syfar.subgroup import theorem_suite
from syfar.symmetry import SymmetryConfig, symmetry_loss, symmetry_loss_gradient
from syfar.trainer import TrainConfig, composite_loss, train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
STUDY_CONFIG = CONFIGS / "sibling_study.json"
SEEDS = list(range(10))


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def sibling_study(tmp_path_factory):
    out = tmp_path_factory.mktemp("sibling-study")
    cfg = load_config(STUDY_CONFIG, [{"study": {"arms": ["none", "symmetry"]}}])
    t0 = time.perf_counter()
    cli.cmd_study(cfg, SEEDS, out)
    elapsed = time.perf_counter() - t0
    summary = json.loads((out / "summary.json").read_text())
    return out, summary["arms"], elapsed


def _mean(arms, arm, metric):
    return arms[arm]["metrics"][metric]["mean"]


# -- gradients ----------------------------------------------------------------


def test_gradients_match_finite_differences(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = {"symmetry": 0.0, "spectral": 0.0, "composite": 0.0}
    for trial in range(50):
        k = int(rng.integers(2, 7))
        c = random_row_stochastic(rng, k)
        cfg = SymmetryConfig(float(rng.uniform(0.05, 1.0)), "fixed")
        worst["symmetry"] = max(worst["symmetry"], rel_error(
            symmetry_loss_gradient(c, cfg), central_difference(lambda m: symmetry_loss(m, cfg), c)))
        worst["spectral"] = max(worst["spectral"], rel_error(
            spectral_penalty_gradient(c, tol=1e-13),
            central_difference(lambda m: spectral_penalty(m, tol=1e-13), c)))

        reg = ("symmetry", "spectral", "none")[trial % 3]
        d, kk, b = 6, int(rng.integers(2, 5)), 12
        model = Model.initialize(d, (5,), kk, seed=trial)
        x, x_adv = rng.random((b, d)), rng.random((b, d))
        y = rng.integers(0, kk, b)
        tc = TrainConfig(float(rng.uniform(0.1, 2)), float(rng.uniform(0.1, 2)),
                         float(rng.uniform(0.1, 2)), reg, AttackSpec(iterations=0))
        composite_loss(model, x, y, x_adv, tc)
        analytic = np.concatenate([g.ravel() for g in model.gradients()])
        shapes = [p.shape for p in model.parameters()]

        def total(flat):
            probe = model.copy()
            pos = 0
            for p, shape in zip(probe.parameters(), shapes):
                p[...] = flat[pos:pos + p.size].reshape(shape)
                pos += p.size
            return composite_loss(probe, x, y, x_adv, tc)[0]["total"]

        params = np.concatenate([p.ravel() for p in model.parameters()])
        worst["composite"] = max(worst["composite"],
                                 rel_error(analytic, central_difference(total, params, h=1e-6)))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    verdict("gradient correctness (symmetry, composite, spectral)", ok, detail)
    assert ok


def test_symmetry_loss_semantics(verdict):
    rng = np.random.default_rng(7)
    value = symmetry_loss([[0.8, 0.2], [0.6, 0.4]], SymmetryConfig(0.5, "fixed"))
    zero_ok, inv_err = True, 0.0
    for _ in range(100):
        k = int(rng.integers(2, 9))
        a = rng.random((k, k))
        zero_ok &= symmetry_loss((a + a.T) / 2) == 0.0
        m = random_row_stochastic(rng, k)
        base = symmetry_loss(m)
        perm = rng.permutation(k)
        inv_err = max(inv_err, abs(symmetry_loss(m.T) - base),
                      abs(symmetry_loss(m[np.ix_(perm, perm)]) - base))
    ok = abs(value - 0.246154) <= 1e-6 and zero_ok and inv_err <= 1e-12
    verdict("symmetry-loss semantics", ok,
            f"2x2 value {value:.6f}, symmetric zero {zero_ok}, invariance err {inv_err:.1e}")
    assert ok


def test_subgroup_theorem_suite(verdict):
    t0 = time.perf_counter()
    out = theorem_suite(trials=1000, seed=0, tolerance=1e-12, exhaustive_max_k=5)
    elapsed = time.perf_counter() - t0
    bell_ok = out["partition_counts"] == bell_triangle(5) == [1, 1, 2, 5, 15, 52]
    ok = (out["passed"] and out["symmetric"]["max_subgroup_asymmetry"] <= 1e-12
          and out["witness"]["max_error"] <= 1e-12 and bell_ok and elapsed < 120)
    verdict("subgroup theorem (both directions, exhaustive K<=5)", ok,
            f"sym max {out['symmetric']['max_subgroup_asymmetry']:.1e}, witness err "
            f"{out['witness']['max_error']:.1e}, Bell {out['partition_counts']}; {elapsed:.1f}s")
    assert ok


def test_metric_oracles(verdict):
    rng = np.random.default_rng(11)
    exact_ok, norm_err = True, 0.0
    for trial in range(200):
        k = int(rng.integers(2, 9))
        if trial % 2:
            counts = rng.integers(0, 40, (k, k))
            cm = ConfusionMatrix(k, counts, "hard-count", counts.sum(axis=1))
            m = counts.astype(float)
            exact_ok &= max_asymmetry_gap(m) == loop_max_asymmetry(m)
            exact_ok &= target_shares(m).tolist() == loop_target_shares(m)
            exact_ok &= np.diag(m).tolist() == loop_source_metrics(m)[0]
            norm = [[v / max(sum(row), 1) for v in row] for row in counts.tolist()]
            diag, worst, gap = loop_source_metrics(norm, list(cm.present()))
            per, w2, g2 = source_class_metrics(cm)
            norm_err = max(norm_err, float(np.max(np.abs(per - diag))), abs(w2 - worst), abs(g2 - gap))
        else:
            m = random_row_stochastic(rng, k)
            diag, worst, gap = loop_source_metrics(m)
            per, w2, g2 = source_class_metrics(m)
            errs = [float(np.max(np.abs(per - diag))), abs(w2 - worst), abs(g2 - gap),
                    abs(max_asymmetry_gap(m) - loop_max_asymmetry(m))]
            for mode in ("total-mass", "as-written"):
                errs.append(float(np.max(np.abs(target_shares(m, mode) - loop_target_shares(m, mode)))))
            norm_err = max(norm_err, *errs)
    _, lo, gap = source_class_metrics([[0.8, 0.2], [0.6, 0.4]])
    skew = (lo, gap, max_asymmetry_gap([[0.8, 0.2], [0.6, 0.4]]))
    _, _, fair_gap = source_class_metrics([[0.6, 0.4], [0.4, 0.6]])
    fair = (fair_gap, max_asymmetry_gap([[0.6, 0.4], [0.4, 0.6]]),
            target_shares([[0.6, 0.4], [0.4, 0.6]]).tolist())
    pair_ok = (np.allclose(skew, (0.4, 0.4, 0.4), atol=1e-12) and fair[:2] == (0.0, 0.0)
               and np.allclose(fair[2], [0.5, 0.5], atol=1e-12))
    ok = exact_ok and norm_err <= 1e-12 and pair_ok
    verdict("metric oracles (200 matrices, hand-derived pair)", ok,
            f"counts exact {exact_ok}, normalized err {norm_err:.1e}, pair {pair_ok}")
    assert ok


def test_attack_contracts(verdict, small_dataset):
    x, y = small_dataset.subset("test")
    eps = 0.1
    iters = (0, 1, 2, 4, 8, 16)
    rates = np.zeros((10, len(iters)))
    proj_ok = mask_ok = count_ok = True
    for seed in range(10):
        rng = np.random.default_rng(seed)
        model, _ = train(Model.initialize(16, (8,), 4, seed=seed), small_dataset,
                         TrainConfig(lambda_adv=0.0, lambda_sym=0.0, regularizer="none", epochs=3,
                                     attack=AttackSpec(iterations=0), seed=seed), validate=False)
        for j, it in enumerate(iters):
            adv = pgd_linf(model, x, y, AttackSpec(epsilon=eps, step_size=0.02, iterations=it))
            proj_ok &= bool(np.all(np.abs(adv - x) <= eps + 1e-12) and adv.min() >= 0 and adv.max() <= 1)
            rates[seed, j] = attack_success_rate(model, x, adv, y)
        mask = rng.random(16) < 0.3
        spec = AttackSpec(family="masked-patch", mask=mask, step_size=0.05, iterations=50,
                          init=("zero", "mid-gray", "best-of-colors")[seed % 3])
        adv = masked_patch_attack(model, x, y, spec)
        mask_ok &= adv[:, ~mask].tobytes() == x[:, ~mask].tobytes()
        tspec = AttackSpec(epsilon=eps, step_size=0.02, iterations=10, mode="targeted")
        targets = attack_targets(tspec, y, 4)
        adv = pgd_linf(model, x, y, tspec)
        hits = sum(loop_argmax(row) == t for row, t in zip(model.forward(adv), targets))
        count_ok &= attack_success_rate(model, x, adv, y, "targeted", targets) == hits / len(y)
    mean = rates.mean(axis=0)
    mono_ok = bool(np.all(np.diff(mean) >= -0.01))
    ok = proj_ok and mask_ok and count_ok and mono_ok
    verdict("attack contracts (10 seeds)", ok,
            f"projection {proj_ok}, mask {mask_ok}, targeted count {count_ok}, "
            f"success by iterations {np.round(mean, 3).tolist()}")
    assert ok


# -- paired sibling study -----------------------------------------------------


def test_symmetry_regularizer_directional_effect(verdict, sibling_study):
    _, arms, elapsed = sibling_study
    rel = lambda m: (_mean(arms, "symmetry", m) - _mean(arms, "none", m)) / _mean(arms, "none", m)
    sym, asym = rel("epoch_sym_loss"), rel("max_asymmetry_gap")
    gap_down = _mean(arms, "symmetry", "accuracy_gap") < _mean(arms, "none", "accuracy_gap")
    robust = _mean(arms, "symmetry", "robust_accuracy") - _mean(arms, "none", "robust_accuracy")
    ok = sym <= -0.30 and asym <= -0.30 and gap_down and abs(robust) <= 0.02 and elapsed < 900
    verdict("directional symmetry effect (10-seed paired study)", ok,
            f"epoch sym loss {sym:+.1%}, max asymmetry {asym:+.1%}, accuracy gap "
            f"{_mean(arms, 'none', 'accuracy_gap'):.3f}->{_mean(arms, 'symmetry', 'accuracy_gap'):.3f}, "
            f"robust {robust:+.4f}; {elapsed:.0f}s")
    assert ok


def test_target_fairness_effect(verdict, sibling_study):
    _, arms, _ = sibling_study
    tmax = (_mean(arms, "none", "tgt_max"), _mean(arms, "symmetry", "tgt_max"))
    tstd = (_mean(arms, "none", "tgt_std"), _mean(arms, "symmetry", "tgt_std"))
    ok = tmax[1] < tmax[0] and tstd[1] < tstd[0]
    verdict("target-fairness effect (total-mass TgtMax, TgtStd)", ok,
            f"TgtMax {tmax[0]:.4f}->{tmax[1]:.4f}, TgtStd {tstd[0]:.4f}->{tstd[1]:.4f}")
    assert ok


def test_regularizer_overhead(verdict, tmp_path):
    cfg = load_config(CONFIGS / "bench.json")
    s = cli.cmd_bench(cfg, 0, tmp_path)
    sym, spec = s["overhead_vs_none"]["symmetry"], s["overhead_vs_none"].get("spectral")
    ok = sym <= 1.05 and s["k"] <= 20 and s["batch_size"] <= 128
    verdict("per-epoch overhead of the symmetry arm", ok,
            f"symmetry {sym:.3f}x, spectral {spec:.3f}x (reported only), K={s['k']}, B={s['batch_size']}")
    assert ok


def test_stability_tooling(verdict, sibling_study, tmp_path):
    out, arms, _ = sibling_study
    cfg = load_config(STUDY_CONFIG, [{"study": {"arms": ["none", "symmetry"]}}])
    cli.cmd_study(cfg, [3, 3], tmp_path)
    dup = json.loads((tmp_path / "summary.json").read_text())["arms"]
    dup_ok = all(v["std"] == 0.0 for arm in dup.values() for v in arm["metrics"].values())

    mean_err, std_err, varying, nonzero = 0.0, 0.0, 0, True
    for arm in ("none", "symmetry"):
        per_seed = {m: [] for m in STABILITY_METRICS + ("epoch_sym_loss",)}
        for idx, seed in enumerate(SEEDS):
            run = out / f"run{idx:02d}_seed{seed}" / arm
            report = json.loads((run / "report.json").read_text())
            for m in STABILITY_METRICS:
                per_seed[m].append(report[m])
            per_seed["epoch_sym_loss"].append(float(_read_csv(run / "epochs.csv")[-1]["epoch_sym_loss"]))
        for m, vals in per_seed.items():
            n = len(vals)
            mu = sum(vals) / n
            sd = (sum((v - mu) ** 2 for v in vals) / (n - 1)) ** 0.5
            got = arms[arm]["metrics"][m]
            mean_err = max(mean_err, abs(got["mean"] - mu))
            std_err = max(std_err, abs(got["std"] - sd))
            if len(set(vals)) > 1:
                varying += 1
                nonzero &= got["std"] > 0
    core = all(arms[a]["metrics"][m]["std"] > 0 for a in ("none", "symmetry")
               for m in ("robust_accuracy", "accuracy_gap", "max_asymmetry_gap", "epoch_sym_loss"))
    ok = dup_ok and mean_err <= 1e-12 and std_err <= 1e-12 and nonzero and core
    verdict("stability tooling (duplicated vs distinct seeds)", ok,
            f"duplicated-seed stds all zero {dup_ok}, mean err {mean_err:.1e}, std err {std_err:.1e}, "
            f"{varying} varying metrics with nonzero std {nonzero}")
    assert ok


def test_reruns_are_bit_identical(verdict, tmp_path):
    sample = CONFIGS / "sample.json"
    shared = tmp_path / "matrix.json"  # same input path for both runs

    def run_all(root):
        cfg = load_config(sample)
        cli.cmd_train(cfg, 1, root / "train")
        cli.cmd_evaluate(cfg, root / "train" / "checkpoint.json", root / "evaluate")
        cli.cmd_study(load_config(sample, [{"study": {"arms": ["none", "symmetry"], "pretrain": {"epochs": 1}}}]),
                      [0, 1], root / "study")
        cli.cmd_gen_data(cfg, root / "gen-data")
        cli.cmd_verify_theorem(root / "theorem", trials=200, seed=1)
        shared.write_bytes((root / "evaluate" / "report.json").read_bytes())
        cli.cmd_verify_theorem(root / "theorem-matrix", matrix=shared)

    a, b = tmp_path / "a", tmp_path / "b"
    run_all(a)
    run_all(b)
    # timing columns and manifest timestamps are outside the reproducibility scope
    skip = {"manifest.json", "epochs.csv"}
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name not in skip)
    differ = [str(p) for p in files if _sha(a / p) != _sha(b / p)]
    timed = sorted(p.relative_to(a) for p in a.rglob("epochs.csv"))
    strip = lambda p: [{k: v for k, v in r.items() if k != "seconds"} for r in _read_csv(p)]
    differ += [str(p) for p in timed if strip(a / p) != strip(b / p)]
    n_ck = sum(p.name == "checkpoint.json" for p in files)
    n_rep = sum(p.name == "report.json" for p in files)
    ok = not differ and n_ck >= 5 and n_rep >= 5
    verdict("bit-identical reruns (train, evaluate, study, gen-data, verify-theorem)", ok,
            f"{len(files)} files hashed ({n_ck} checkpoints, {n_rep} reports), {len(differ)} differ")
    assert ok

"""Command-line front end.

Subcommands: ``train``, ``evaluate``, ``study``, ``bench``, ``verify-theorem``
and ``gen-data``. Every command writes into one output directory and ends
with ``manifest.json`` listing what it wrote. The default output root is
``$SYFAR_OUT_ROOT`` (falling back to ``./runs``) plus the command name.

Exit codes: 0 success, 1 a verification check failed, 2 configuration
error, 3 input/output error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import statistics
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config, parse_override
from .confusion import ConfusionMatrix
from .data import SPLITS, write_attributes, write_csv
from .exceptions import (ConfigError, DomainError, IngestionError, KindError, NumericError,
                         ShapeError, SyfarError)
from .io import atomic_write_csv, atomic_write_json, atomic_write_text, read_json
from .metrics import CSV_FIELDS, STABILITY_METRICS, asymmetry_tsv, confusion_tsv, evaluate
from .nn import Model, load_checkpoint, save_checkpoint
from .subgroup import (read_partition, subgroup_accuracy_gaps, subgroup_asymmetry,
                       subgroup_matrix, theorem_suite, verify_theorem)
from .trainer import EPOCH_FIELDS, TrainConfig, train

log = logging.getLogger("syfar")

OUT_ROOT_ENV = "SYFAR_OUT_ROOT"
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4
SUMMARY_METRICS = STABILITY_METRICS + ("attack_success_rate", "epoch_sym_loss")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Run:
    """Output directory bookkeeping: every written file lands in the manifest."""

    def __init__(self, out_dir, command, cfg: RunConfig | None, seeds=()):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.seeds = list(seeds)
        self.started = _now()
        self.artifacts = []

    def _track(self, rel):
        rel = str(rel)
        if rel not in self.artifacts:
            self.artifacts.append(rel)
        return self.out / rel

    def json(self, rel, obj):
        return atomic_write_json(self._track(rel), obj)

    def text(self, rel, text):
        return atomic_write_text(self._track(rel), text)

    def csv(self, rel, rows, fields):
        return atomic_write_csv(self._track(rel), rows, fields)

    def checkpoint(self, rel, model):
        save_checkpoint(model, self._track(rel))

    def finish(self, argv=None, extra=None):
        manifest = {
            "command": self.command,
            "argv": list(argv) if argv is not None else None,
            "version": __version__,
            "config_hash": self.cfg.digest() if self.cfg else None,
            "seeds": self.seeds,
            "started": self.started,
            "finished": _now(),
            "artifacts": sorted(self.artifacts + ["manifest.json"]),
        }
        if extra:
            manifest.update(extra)
        atomic_write_json(self.out / "manifest.json", manifest)
        return manifest


def default_out_dir(command):
    return Path(os.environ.get(OUT_ROOT_ENV) or "runs") / command


# -- shared helpers ------------------------------------------------------------


def _initial_model(cfg: RunConfig, ds, seed) -> Model:
    t = cfg["train"]
    if t["mode"] == "fine-tune":
        if not t["checkpoint"]:
            raise ConfigError("train.checkpoint: required in fine-tune mode")
        model = load_checkpoint(cfg.path(t["checkpoint"]))
        if model.input_dim != ds.dims or model.num_classes != ds.k:
            raise ShapeError(f"checkpoint expects {model.input_dim} features / {model.num_classes} classes, "
                             f"data has {ds.dims} / {ds.k}")
        return model
    return Model.initialize(ds.dims, tuple(cfg["model"]["hidden_sizes"]), ds.k, seed=seed)


def _pretrain(cfg: RunConfig, ds, model, seed):
    pre = cfg["study"]["pretrain"]
    if not pre:
        return model
    tc = cfg.train_config(seed, regularizer="none", lambda_sym=0.0, mode="scratch",
                          checkpoint=None, **pre)
    model, _ = train(model, ds, tc, validate=False)
    return model


def _arm_config(cfg: RunConfig, arm, seed) -> TrainConfig:
    lam = 0.0 if arm == "none" else cfg["train"]["lambda_sym"]
    return cfg.train_config(seed, regularizer=arm, lambda_sym=lam)


def _evaluate(cfg: RunConfig, model, ds):
    e = cfg["eval"]
    if e["split"] not in SPLITS:
        raise ConfigError(f"eval.split: expected one of {SPLITS}")
    x, y = ds.subset(e["split"])
    return evaluate(model, x, y, cfg.attack("eval.attack"), normalize=e["normalize"],
                    target_normalization=e["target_normalization"], sym_cfg=cfg.symmetry())


def parse_seeds(text):
    """``"0-9"``, ``"0,1,5"`` or a mix such as ``"0-2,7"``."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError as exc:
            raise ConfigError(f"--seeds: cannot parse {part!r}") from exc
    return seeds


# -- commands ------------------------------------------------------------------


def cmd_train(cfg: RunConfig, seed, out_dir, argv=None):
    ds = cfg.dataset()
    tc = cfg.train_config(seed)
    model = _initial_model(cfg, ds, seed)
    run = Run(out_dir, "train", cfg, [seed])
    run.json("config.json", cfg.tree)

    def progress(rec):
        log.info("epoch %d  total %.4f  sym %.4f  val benign %s  val robust %s", rec.epoch,
                 rec.total_loss, rec.epoch_sym_loss, rec.val_benign_accuracy, rec.val_robust_accuracy)

    model, records = train(model, ds, tc, eval_attack=cfg.attack("eval.attack"), on_epoch=progress)
    run.checkpoint("checkpoint.json", model)
    run.csv("epochs.csv", [r.as_row() for r in records], EPOCH_FIELDS)
    return run.finish(argv, {"checkpoint_sha256": model.digest()})


def _subgroup_entry(report, partition_path):
    name, part = read_partition(partition_path)
    robust = report.robust_matrix().normalized()
    benign = ConfusionMatrix.from_dict(report.benign_confusion).normalized()
    if max(part.classes(), default=-1) >= robust.k:
        raise ConfigError(f"{partition_path}: class index outside [0, {robust.k})")
    asym, pair = subgroup_asymmetry(robust, part)
    entry = {
        "file": str(partition_path),
        "name": name,
        "groups": dict(zip(part.names, (list(g) for g in part.groups))),
        "robust_rates": subgroup_matrix(robust, part).tolist(),
        "benign_rates": subgroup_matrix(benign, part).tolist(),
        "max_subgroup_asymmetry": asym,
        "max_pair": None if pair is None else [part.names[pair[0]], part.names[pair[1]]],
        "theorem": verify_theorem(robust.entries).to_dict(),
    }
    if part.m == 2:
        entry["accuracy"] = subgroup_accuracy_gaps(report, part)
    return entry


def cmd_evaluate(cfg: RunConfig, checkpoint, out_dir, partitions=(), argv=None):
    ds = cfg.dataset()
    model = load_checkpoint(checkpoint)
    if model.input_dim != ds.dims or model.num_classes != ds.k:
        raise ShapeError("checkpoint does not match the configured data")
    report = _evaluate(cfg, model, ds)
    run = Run(out_dir, "evaluate", cfg)
    run.json("report.json", report.to_dict())
    run.json("benign_confusion.json", report.benign_confusion)
    run.json("robust_confusion.json", report.robust_confusion)
    robust = report.robust_matrix()
    metric = robust.normalized() if report.normalized else robust
    run.text("robust_confusion.tsv", confusion_tsv(metric))
    run.text("benign_confusion.tsv",
             confusion_tsv(ConfusionMatrix.from_dict(report.benign_confusion).normalized()))
    run.text("asymmetry.tsv", asymmetry_tsv(metric))
    run.csv("per_class.csv",
            [{"class": i, "samples": n, "benign_accuracy": b, "robust_accuracy": r}
             for i, (n, b, r) in enumerate(zip(report.class_counts, report.per_class_benign,
                                               report.per_class_robust))],
            ("class", "samples", "benign_accuracy", "robust_accuracy"))
    run.csv("target_shares.csv", [{"class": j, "share": s} for j, s in enumerate(report.target_shares)],
            ("class", "share"))
    paths = list(partitions) + [str(cfg.path(p)) for p in cfg["eval"]["partitions"]]
    if paths:
        run.json("subgroups.json", [_subgroup_entry(report, p) for p in paths])
    return run.finish(argv, {"checkpoint": str(checkpoint)})


def _summary(rows, metrics=SUMMARY_METRICS):
    out = {}
    for arm in dict.fromkeys(r["arm"] for r in rows):
        ok = [r for r in rows if r["arm"] == arm and r["status"] == "ok"]
        stats = {}
        for m in metrics:
            vals = [float(r[m]) for r in ok]
            stats[m] = {
                "mean": statistics.fmean(vals) if vals else None,
                "std": statistics.stdev(vals) if len(vals) >= 2 else None,
                "n": len(vals),
            }
        out[arm] = {"runs": len(ok), "seeds": [r["seed"] for r in ok], "metrics": stats}
    return out


def _comparison(summary, metrics=SUMMARY_METRICS, baseline="none"):
    rows = []
    arms = list(summary)
    for m in metrics:
        row = {"metric": m}
        base = summary.get(baseline, {}).get("metrics", {}).get(m, {}).get("mean")
        for arm in arms:
            mean = summary[arm]["metrics"][m]["mean"]
            row[f"{arm}_mean"] = mean
            row[f"{arm}_std"] = summary[arm]["metrics"][m]["std"]
            if arm != baseline:
                rel = None if mean is None or not base else (mean - base) / base
                row[f"{arm}_rel_change"] = rel
        rows.append(row)
    fields = ["metric"]
    for arm in arms:
        fields += [f"{arm}_mean", f"{arm}_std"] + ([f"{arm}_rel_change"] if arm != baseline else [])
    return rows, fields


def cmd_study(cfg: RunConfig, seeds, out_dir, argv=None):
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ConfigError("study.seeds: at least two seeds are required")
    arms = list(cfg["study"]["arms"])
    bad = [a for a in arms if a not in ("none", "symmetry", "spectral")]
    if bad or not arms:
        raise ConfigError(f"study.arms: unknown arm(s) {bad}")
    ds = cfg.dataset()
    run = Run(out_dir, "study", cfg, seeds)
    run.json("config.json", cfg.tree)
    rows, failures, first_error = [], [], None
    for idx, seed in enumerate(seeds):
        tag = f"run{idx:02d}_seed{seed}"
        try:
            base = _pretrain(cfg, ds, _initial_model(cfg, ds, seed), seed)
        except (SyfarError, FloatingPointError) as exc:
            first_error = first_error or exc
            failures.append({"run": idx, "seed": seed, "arm": None, "error": str(exc)})
            rows += [{"run": idx, "seed": seed, "arm": a, "status": "failed"} for a in arms]
            log.warning("%s: pretraining failed: %s", tag, exc)
            continue
        if cfg["study"]["pretrain"]:
            run.checkpoint(f"{tag}/pretrained.json", base)
        for arm in arms:
            row = {"run": idx, "seed": seed, "arm": arm}
            try:
                model, records = train(base, ds, _arm_config(cfg, arm, seed), validate=False)
                report = _evaluate(cfg, model, ds)
            except (SyfarError, FloatingPointError) as exc:
                first_error = first_error or exc
                failures.append({"run": idx, "seed": seed, "arm": arm, "error": str(exc)})
                rows.append({**row, "status": "failed"})
                log.warning("%s/%s failed: %s", tag, arm, exc)
                continue
            run.checkpoint(f"{tag}/{arm}/checkpoint.json", model)
            run.csv(f"{tag}/{arm}/epochs.csv", [r.as_row() for r in records], EPOCH_FIELDS)
            run.json(f"{tag}/{arm}/report.json", report.to_dict())
            final_sym = records[-1].epoch_sym_loss if records else float("nan")
            rows.append({**row, "status": "ok", **report.csv_row(), "epoch_sym_loss": final_sym})
            log.info("%s/%s  robust %.3f  gap %.3f  max-asym %.3f  epoch sym %.4f", tag, arm,
                     report.robust_accuracy, report.accuracy_gap, report.max_asymmetry_gap, final_sym)
    fields = ("run", "seed", "arm", "status") + CSV_FIELDS + ("epoch_sym_loss",)
    run.csv("metrics.csv", rows, fields)
    summary = _summary(rows)
    run.json("summary.json", {"arms": summary, "failures": failures, "seeds": seeds})
    table, table_fields = _comparison(summary)
    run.csv("comparison.csv", table, table_fields)
    manifest = run.finish(argv, {"failures": len(failures)})
    if first_error is not None:
        raise first_error
    return manifest


def cmd_bench(cfg: RunConfig, seed, out_dir, argv=None):
    """Per-epoch wall-clock of each regularizer arm on identical data and seed.

    Arms are interleaved epoch by epoch (rotating the order) so drift in
    machine load hits every arm alike. The overhead of an arm is the median
    over epochs of its time divided by the plain arm's time in that epoch.
    """
    b = cfg["bench"]
    arms = list(b["arms"])
    if "none" not in arms:
        arms.insert(0, "none")
    ds = cfg.dataset()
    start = _initial_model(cfg, ds, seed)
    models = {arm: start.copy() for arm in arms}
    configs = {arm: _arm_config(cfg, arm, seed).with_(batch_size=int(b["batch_size"]), epochs=1)
               for arm in arms}
    rows = []
    for epoch in range(int(b["epochs"])):
        shift = epoch % len(arms)
        for arm in arms[shift:] + arms[:shift]:
            tc = configs[arm].with_(seed=seed * 100003 + epoch)
            models[arm], (rec,) = train(models[arm], ds, tc, validate=False)
            rows.append({"arm": arm, "epoch": epoch, "seconds": rec.seconds,
                         "batch_size": tc.batch_size, "k": ds.k,
                         "train_samples": int(len(ds.subset("train")[1])),
                         "total_loss": rec.total_loss, "epoch_sym_loss": rec.epoch_sym_loss})
            log.info("bench %s epoch %d: %.3fs", arm, epoch, rec.seconds)
    rows.sort(key=lambda r: (arms.index(r["arm"]), r["epoch"]))
    secs = {arm: [r["seconds"] for r in rows if r["arm"] == arm] for arm in arms}
    # ratio within each epoch first: neighbours in time share the machine state
    paired = {arm: statistics.median(a / b for a, b in zip(secs[arm], secs["none"]))
              for arm in arms if arm != "none"}
    summary = {
        "median_seconds": {arm: statistics.median(v) for arm, v in secs.items()},
        "mean_seconds": {arm: statistics.fmean(v) for arm, v in secs.items()},
        "overhead_vs_none": paired,
        "k": ds.k,
        "batch_size": int(b["batch_size"]),
        "epochs": int(b["epochs"]),
    }
    run = Run(out_dir, "bench", cfg, [seed])
    run.csv("bench.csv", rows, ("arm", "epoch", "seconds", "batch_size", "k", "train_samples",
                                "total_loss", "epoch_sym_loss"))
    run.json("bench_summary.json", summary)
    run.finish(argv)
    return summary


def _load_matrix(path):
    d = read_json(path)
    if "robust_confusion" in d:
        d = d["robust_confusion"]
    try:
        cm = ConfusionMatrix.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise IngestionError(f"{path}: not a confusion matrix or report ({exc})") from exc
    return cm.normalized() if cm.kind == "hard-count" else cm


def cmd_verify_theorem(out_dir, matrix=None, partitions=(), trials=1000, seed=0, tolerance=1e-12,
                       argv=None):
    run = Run(out_dir, "verify-theorem", None, [seed])
    if matrix is not None:
        cm = _load_matrix(matrix)
        verdict = verify_theorem(cm.entries, trials=trials, tolerance=tolerance, rng_seed=seed)
        result = {"source": str(matrix), "verdict": verdict.to_dict(), "partitions": []}
        for p in partitions:
            name, part = read_partition(p)
            asym, _ = subgroup_asymmetry(cm, part)
            result["partitions"].append({"file": str(p), "name": name,
                                         "rates": subgroup_matrix(cm, part).tolist(),
                                         "max_subgroup_asymmetry": asym})
        passed = verdict.passed
    else:
        result = theorem_suite(trials=trials, seed=seed, tolerance=tolerance)
        passed = result["passed"]
    result["passed"] = passed
    run.json("theorem.json", result)
    run.finish(argv, {"passed": passed})
    return result


def cmd_gen_data(cfg: RunConfig, out_dir, argv=None):
    ds = cfg.dataset()
    run = Run(out_dir, "gen-data", cfg, [cfg["data"]["seed"]])
    write_csv(ds, run._track("data.csv"))
    run.json("splits.json", {name: idx.tolist() for name, idx in ds.splits.items()})
    run.json("data_config.json", cfg["data"])
    if ds.attributes:
        write_attributes(ds.attributes, run._track("attributes.json"))
    counts = {name: ds.class_counts(name).tolist() for name in SPLITS}
    run.json("class_counts.json", counts)
    return run.finish(argv)


# -- argument handling -----------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None,
                        help="run seed (for study: first of consecutive seeds)")
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_ROOT_ENV}/<command>)")
    common.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override a config field (JSON value)")

    p = argparse.ArgumentParser(prog="syfar", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="adversarially train a model")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lambda-sym", type=float)
    t.add_argument("--regularizer", choices=("none", "symmetry", "spectral"))
    t.add_argument("--learning-rate", type=float)
    t.add_argument("--checkpoint", help="start from this checkpoint (fine-tune mode)")

    e = sub.add_parser("evaluate", parents=[common], help="attack a checkpoint and report fairness")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--partition", action="append", default=[], help="partition JSON (repeatable)")
    e.add_argument("--split", choices=SPLITS)

    s = sub.add_parser("study", parents=[common], help="multi-seed paired study across arms")
    s.add_argument("--seeds", help="e.g. 0-9 or 0,3,3")
    s.add_argument("--arms", help="comma list from none,symmetry,spectral")

    sub.add_parser("bench", parents=[common], help="per-epoch timing across regularizer arms")

    v = sub.add_parser("verify-theorem", parents=[common],
                       help="check class/subgroup symmetry equivalence")
    v.add_argument("--matrix", help="confusion JSON or report JSON to check")
    v.add_argument("--partition", action="append", default=[])
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--tolerance", type=float, default=1e-12)

    sub.add_parser("gen-data", parents=[common], help="write the configured dataset to CSV")
    return p


def _flag_overrides(args):
    ov = [parse_override(s) for s in args.overrides]
    named = {
        "epochs": ("train", "epochs"), "lambda_sym": ("train", "lambda_sym"),
        "regularizer": ("train", "regularizer"), "learning_rate": ("train", "learning_rate"),
        "split": ("eval", "split"),
    }
    for attr, (section, key) in named.items():
        value = getattr(args, attr, None)
        if value is not None:
            ov.append({section: {key: value}})
    if args.command == "train" and args.checkpoint:
        ov.append({"train": {"mode": "fine-tune", "checkpoint": str(Path(args.checkpoint).resolve())}})
    if args.command == "study" and args.arms:
        ov.append({"study": {"arms": [a.strip() for a in args.arms.split(",") if a.strip()]}})
    return ov


def _dispatch(args, argv):
    out = Path(args.out_dir) if args.out_dir else default_out_dir(args.command)
    seed = 0 if args.seed is None else args.seed
    if args.command == "verify-theorem":
        r = cmd_verify_theorem(out, args.matrix, args.partition, args.trials, seed, args.tolerance, argv)
        log.info("theorem checks %s", "passed" if r["passed"] else "FAILED")
        return EXIT_OK if r["passed"] else EXIT_CHECK
    cfg = load_config(args.config, _flag_overrides(args))
    if args.command == "train":
        m = cmd_train(cfg, seed, out, argv)
        log.info("checkpoint %s", m["checkpoint_sha256"])
    elif args.command == "evaluate":
        cmd_evaluate(cfg, args.checkpoint, out, args.partition, argv)
    elif args.command == "study":
        if args.seeds:
            seeds = parse_seeds(args.seeds)
        elif args.seed is not None:
            seeds = [args.seed + i for i in range(len(cfg["study"]["seeds"]))]
        else:
            seeds = cfg["study"]["seeds"]
        cmd_study(cfg, seeds, out, argv)
    elif args.command == "bench":
        s = cmd_bench(cfg, seed, out, argv)
        for arm, ratio in s["overhead_vs_none"].items():
            log.info("%s / none per-epoch time: %.3fx", arm, ratio)
    elif args.command == "gen-data":
        cmd_gen_data(cfg, out, argv)
    log.info("wrote %s", out)
    return EXIT_OK


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        return _dispatch(args, argv)
    except (ConfigError, DomainError, KindError, ShapeError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (OSError, IngestionError, json.JSONDecodeError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except SyfarError as exc:
        # malformed checkpoints and other unreadable inputs
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

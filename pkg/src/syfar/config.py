"""Run configuration: JSON file with data/model/attack/train/eval/study/bench
sections, merged over defaults, with ``section.key=value`` overrides.

Precedence is flag > file > default. Unknown keys are rejected with their
dotted path so typos fail loudly.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .attacks import AttackSpec
from .data import CsvSchema, Dataset, SyntheticSpec, generate_synthetic, load_attributes, load_csv, split
from .exceptions import ConfigError
from .io import dumps_json
from .symmetry import SymmetryConfig
from .trainer import TrainConfig

DEFAULTS = {
    "data": {
        "source": "synthetic",
        "k": 6,
        "dims": 64,
        "samples_per_class": 300,
        "cluster_spread": 0.15,
        "sibling_pairs": [[0, 1, 0.7]],
        "center_low": 0.2,
        "center_high": 0.8,
        "seed": 0,
        "image_shape": [8, 8],
        "path": None,
        "scale": "unit",
        "header": False,
        "fractions": [0.8, 0.1, 0.1],
        "split_seed": 0,
        "attributes": None,
    },
    "model": {"hidden_sizes": [32]},
    "attack": {
        "family": "masked-patch",
        "mask": "eyeglass",
        "step_size": 0.1,
        "iterations": 10,
    },
    "train": {
        "lambda_clean": 1.0,
        "lambda_adv": 1.0,
        "lambda_sym": 1.0,
        "regularizer": "symmetry",
        "epochs": 5,
        "batch_size": 64,
        "learning_rate": 0.05,
        "mode": "scratch",
        "checkpoint": None,
        "symmetry": {"epsilon": None, "epsilon_mode": "one-over-k"},
    },
    "eval": {
        "attack": None,
        "split": "test",
        "normalize": True,
        "target_normalization": "total-mass",
        "partitions": [],
    },
    "study": {
        "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
        "arms": ["none", "symmetry", "spectral"],
        "pretrain": None,
    },
    "bench": {
        "epochs": 5,
        "batch_size": 128,
        "arms": ["none", "symmetry", "spectral"],
    },
}

# values replaced wholesale (not merged key by key), validated downstream
_OPEN = {("", "attack"), ("eval", "attack"), ("study", "pretrain"), ("train", "symmetry")}
_ATTACK_KEYS = {"family", "epsilon", "step_size", "iterations", "momentum_decay", "mask", "rect",
                "mode", "target_class", "init", "palette", "image_shape"}
_PRETRAIN_KEYS = {"epochs", "learning_rate", "batch_size"}


class RunConfig:
    """Resolved configuration plus the directory relative paths resolve against."""

    def __init__(self, tree: dict, base_dir=None, source=None):
        self.tree = tree
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        self.source = source

    def __getitem__(self, section):
        return self.tree[section]

    def canonical(self) -> str:
        return dumps_json(self.tree)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def path(self, value):
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    # -- builders --------------------------------------------------------

    def dataset(self) -> Dataset:
        d = self["data"]
        try:
            if d["source"] == "synthetic":
                spec = SyntheticSpec(
                    k=d["k"], dims=d["dims"], samples_per_class=d["samples_per_class"],
                    cluster_spread=d["cluster_spread"],
                    sibling_pairs=[tuple(p) for p in d["sibling_pairs"]],
                    center_low=d["center_low"], center_high=d["center_high"], seed=d["seed"],
                    image_shape=d["image_shape"])
                ds = generate_synthetic(spec)
            elif d["source"] == "csv":
                if not d["path"]:
                    raise ConfigError("path: required when source is 'csv'")
                schema = CsvSchema(k=d["k"], dims=d["dims"], scale=d["scale"], header=d["header"],
                                   image_shape=tuple(d["image_shape"]) if d["image_shape"] else None)
                ds = load_csv(self.path(d["path"]), schema)
            else:
                raise ConfigError(f"source: unknown source {d['source']!r}")
        except ConfigError as exc:
            raise ConfigError(f"data: {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"data: {exc}") from exc
        if d["attributes"]:
            ds.attributes = load_attributes(self.path(d["attributes"]))
        return split(ds, d["fractions"], d["split_seed"])

    def attack(self, section="attack") -> AttackSpec:
        raw = self["attack"] if section == "attack" else (self["eval"]["attack"] or self["attack"])
        return build_attack(raw, self.base_dir, section)

    def symmetry(self) -> SymmetryConfig:
        s = self["train"]["symmetry"] or {}
        try:
            return SymmetryConfig(**s)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train.symmetry: {exc}") from exc

    def train_config(self, seed, **changes) -> TrainConfig:
        t = dict(self["train"])
        t.pop("symmetry")
        t["checkpoint"] = str(self.path(t["checkpoint"])) if t["checkpoint"] else None
        t.update(attack=self.attack(), seed=int(seed), symmetry=self.symmetry())
        t.update(changes)
        try:
            return TrainConfig(**t)
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"train: {exc}") from exc


def build_attack(raw, base_dir=None, where="attack") -> AttackSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(raw) - _ATTACK_KEYS
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown field")
    try:
        return AttackSpec.from_dict(raw, base_dir)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _merge(base, override, path):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if path == "" and key not in base:
            raise ConfigError(f"{where}: unknown section")
        if path and key not in base:
            raise ConfigError(f"{where}: unknown field")
        if (path, key) in _OPEN or not isinstance(base[key], dict):
            out[key] = copy.deepcopy(value)
        else:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            out[key] = _merge(base[key], value, where)
    return out


def _check_open(tree):
    pre = tree["study"]["pretrain"]
    if pre is not None:
        if not isinstance(pre, dict):
            raise ConfigError("study.pretrain: expected an object or null")
        unknown = set(pre) - _PRETRAIN_KEYS
        if unknown:
            raise ConfigError(f"study.pretrain.{sorted(unknown)[0]}: unknown field")
    sym = tree["train"]["symmetry"]
    if sym is not None and set(sym) - {"epsilon", "epsilon_mode"}:
        raise ConfigError(f"train.symmetry.{sorted(set(sym) - {'epsilon', 'epsilon_mode'})[0]}: unknown field")
    for key in ("seeds", "arms"):
        if not isinstance(tree["study"][key], list):
            raise ConfigError(f"study.{key}: expected a list")
    if not isinstance(tree["eval"]["partitions"], list):
        raise ConfigError("eval.partitions: expected a list")


def parse_override(text: str):
    """``section.key=value``; the value is parsed as JSON, else kept as text."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override {text!r}: expected section.key=value")
    lhs, rhs = text.split("=", 1)
    try:
        value = json.loads(rhs)
    except json.JSONDecodeError:
        value = rhs
    node = value
    for part in reversed(lhs.split(".")):
        node = {part: node}
    return node


def load_config(path=None, overrides=()) -> RunConfig:
    tree = copy.deepcopy(DEFAULTS)
    base_dir = None
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        tree = _merge(tree, raw, "")
        base_dir = path.parent
    for ov in overrides:
        tree = _merge(tree, ov, "")
    _check_open(tree)
    return RunConfig(tree, base_dir, None if path is None else str(path))

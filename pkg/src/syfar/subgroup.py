"""Subgroup misclassification rates and the class/subgroup symmetry equivalence.

A partition groups class indices into disjoint sets. The size-normalized
rate from ``Ga`` to ``Gb`` is the mean of ``C[i, j]`` over ``i in Ga``,
``j in Gb``. A symmetric class matrix gives symmetric rates for every
partition; conversely the partition ``{i}, {j}, rest`` exposes ``C[i, j]``
and ``C[j, i]`` directly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .confusion import ConfusionMatrix
from .exceptions import ConfigError, DomainError
from .io import atomic_write_text
from .validation import check_square


@dataclass
class Partition:
    groups: list
    names: list | None = None

    def __post_init__(self):
        self.groups = [tuple(sorted(int(i) for i in g)) for g in self.groups]
        seen = set()
        for g in self.groups:
            if not g:
                raise DomainError("partition groups must be non-empty")
            if seen.intersection(g):
                raise DomainError(f"partition groups overlap at {sorted(seen.intersection(g))}")
            seen.update(g)
        if self.names is None:
            self.names = [f"G{a}" for a in range(len(self.groups))]
        elif len(self.names) != len(self.groups):
            raise DomainError("one name per group required")

    @property
    def m(self) -> int:
        return len(self.groups)

    def classes(self):
        return sorted(i for g in self.groups for i in g)

    def to_dict(self, name=None) -> dict:
        d = {"groups": {n: list(g) for n, g in zip(self.names, self.groups)}}
        if name:
            d["name"] = name
        return d

    @classmethod
    def from_dict(cls, d) -> "Partition":
        groups = d["groups"]
        if isinstance(groups, dict):
            return cls(list(groups.values()), list(groups.keys()))
        return cls(groups)


def read_partition(path) -> tuple:
    """Load ``{"name": ..., "groups": {group: [classes]}}``; returns (name, Partition)."""
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    try:
        return d.get("name", str(path)), Partition.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed partition file ({exc})") from exc


def write_partition(partition: Partition, path, name=None):
    return atomic_write_text(path, json.dumps(partition.to_dict(name), indent=2) + "\n")


def partition_from_attributes(attributes: dict, key: str) -> Partition:
    by_value = {}
    for cls_idx, attrs in sorted(attributes.items()):
        if key in attrs:
            by_value.setdefault(str(attrs[key]), []).append(int(cls_idx))
    if not by_value:
        raise ConfigError(f"no class carries attribute {key!r}")
    names = sorted(by_value)
    return Partition([by_value[n] for n in names], names)


def _entries(c):
    return c.entries if isinstance(c, ConfusionMatrix) else check_square(c)


def subgroup_rate(c, ga, gb) -> float:
    m = _entries(c)
    ga, gb = list(ga), list(gb)
    if not ga or not gb:
        raise DomainError("subgroups must be non-empty")
    if set(ga) & set(gb):
        raise DomainError("subgroups must be disjoint")
    return float(m[np.ix_(ga, gb)].sum() / (len(ga) * len(gb)))


def subgroup_matrix(c, partition: Partition) -> np.ndarray:
    """m x m rates; the diagonal holds mean within-group confusion."""
    m = _entries(c)
    out = np.empty((partition.m, partition.m))
    for a, ga in enumerate(partition.groups):
        for b, gb in enumerate(partition.groups):
            out[a, b] = m[np.ix_(ga, gb)].sum() / (len(ga) * len(gb))
    return out


def subgroup_asymmetry(c, partition: Partition):
    """Largest ``|S_ab - S_ba|`` over group pairs, with the arg-max pair."""
    s = subgroup_matrix(c, partition)
    if partition.m < 2:
        return 0.0, None
    d = np.abs(s - s.T)
    a, b = np.unravel_index(np.argmax(d), d.shape)
    a, b = sorted((int(a), int(b)))
    return float(d[a, b]), (a, b)


def enumerate_partitions(k: int):
    """Yield every set partition of ``range(k)`` (restricted growth strings)."""
    if k == 0:
        yield Partition([])
        return
    codes = [0] * k

    def rec(i, top):
        if i == k:
            groups = [[] for _ in range(top + 1)]
            for cls_idx, g in enumerate(codes):
                groups[g].append(cls_idx)
            yield Partition(groups)
            return
        for g in range(top + 2):
            codes[i] = g
            yield from rec(i + 1, max(top, g))

    yield from rec(1, 0)


def count_partitions(k: int) -> int:
    return sum(1 for _ in enumerate_partitions(k))


def random_partition(k: int, rng: np.random.Generator, min_groups=2) -> Partition:
    m = int(rng.integers(min(min_groups, k), k + 1))
    order = rng.permutation(k)
    cuts = np.sort(rng.choice(np.arange(1, k), size=m - 1, replace=False)) if m > 1 else []
    return Partition([g.tolist() for g in np.split(order, cuts)])


def witness_partition(c):
    """Most asymmetric class pair and the partition ``{i}, {j}, rest`` around it."""
    m = _entries(c)
    k = m.shape[0]
    d = np.abs(m - m.T)
    i, j = np.unravel_index(np.argmax(np.triu(d, 1)), d.shape)
    i, j = int(i), int(j)
    rest = [x for x in range(k) if x not in (i, j)]
    groups = [[i], [j]] + ([rest] if rest else [])
    return (i, j), Partition(groups)


@dataclass
class TheoremVerdict:
    k: int
    class_asymmetry: float
    tolerance: float
    direction: str
    passed: bool
    trials: int = 0
    max_subgroup_asymmetry: float | None = None
    bound: float | None = None
    witness_pair: list | None = None
    witness_partition: list | None = None
    witness_subgroup_asymmetry: float | None = None
    exhaustive_partitions: int | None = None
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def verify_theorem(c, trials=100, tolerance=1e-12, rng_seed=0, exhaustive=None,
                   witness_tolerance=1e-12) -> TheoremVerdict:
    """Check the class/subgroup symmetry equivalence on one matrix.

    If ``c`` is symmetric within ``tolerance``, ``trials`` random partitions
    (or all of them when ``exhaustive``) must have subgroup asymmetry within
    the bound ``max_ij |C_ij - C_ji|`` (itself <= tolerance). Otherwise the
    singleton witness partition must reproduce the class-level gap.
    ``exhaustive`` defaults to ``K <= 6``.
    """
    m = _entries(c)
    k = m.shape[0]
    if k < 2:
        raise DomainError("theorem checks need K >= 2")
    gap = float(np.max(np.abs(m - m.T)))
    if gap <= tolerance:
        if exhaustive is None:
            exhaustive = k <= 6
        rng = np.random.default_rng(rng_seed)
        partitions = enumerate_partitions(k) if exhaustive else (
            random_partition(k, rng) for _ in range(trials))
        worst, count, failures = 0.0, 0, []
        # each subgroup rate is an average of class-level differences
        bound = gap + 1e-15
        for p in partitions:
            count += 1
            asym, pair = subgroup_asymmetry(m, p)
            worst = max(worst, asym)
            if asym > max(bound, tolerance) and len(failures) < 10:
                failures.append({"groups": [list(g) for g in p.groups], "asymmetry": asym})
        return TheoremVerdict(k, gap, tolerance, "symmetric-implies-subgroup",
                              not failures, count, worst, gap,
                              exhaustive_partitions=count if exhaustive else None,
                              failures=failures)
    (i, j), p = witness_partition(m)
    asym = abs(subgroup_rate(m, p.groups[0], p.groups[1]) - subgroup_rate(m, p.groups[1], p.groups[0]))
    ok = abs(asym - gap) <= witness_tolerance
    return TheoremVerdict(k, gap, tolerance, "asymmetric-has-witness", ok,
                          witness_pair=[i, j],
                          witness_partition=[list(g) for g in p.groups],
                          witness_subgroup_asymmetry=asym,
                          failures=[] if ok else [{"pair": [i, j], "asymmetry": asym}])


def subgroup_accuracy_gaps(report, partition: Partition) -> dict:
    """Count-weighted per-group benign/robust accuracy and the two-group gaps."""
    if partition.m != 2:
        raise DomainError("accuracy gaps need a two-group partition")
    counts = np.asarray(report.class_counts, dtype=np.float64)
    benign = np.asarray(report.per_class_benign, dtype=np.float64)
    robust = np.asarray(report.per_class_robust, dtype=np.float64)
    groups, notes = {}, []
    for name, g in zip(partition.names, partition.groups):
        idx = list(g)
        n = counts[idx].sum()
        if n == 0:
            notes.append(f"group {name!r} has no evaluated samples")
            groups[name] = {"benign": None, "robust": None, "samples": 0}
            continue
        groups[name] = {
            "benign": float(np.dot(counts[idx], benign[idx]) / n),
            "robust": float(np.dot(counts[idx], robust[idx]) / n),
            "samples": int(n),
        }
    a, b = (groups[n] for n in partition.names)
    gap = lambda key: None if a[key] is None or b[key] is None else abs(a[key] - b[key])
    return {"groups": groups, "benign_gap": gap("benign"), "robust_gap": gap("robust"),
            "notes": notes}


def theorem_suite(trials=1000, seed=0, tolerance=1e-12, k_range=(2, 8), exhaustive_max_k=5) -> dict:
    """Randomized check of both theorem directions plus exhaustive small-K checks.

    Direction 1 draws a symmetric matrix and a random partition per trial;
    direction 2 draws an asymmetric matrix and checks its witness partition.
    """
    rng = np.random.default_rng(seed)
    lo, hi = k_range
    worst, sym_failures = 0.0, 0
    for _ in range(trials):
        k = int(rng.integers(lo, hi + 1))
        a = rng.random((k, k))
        c = (a + a.T) / (2 * k)
        asym, _ = subgroup_asymmetry(c, random_partition(k, rng))
        worst = max(worst, asym)
        sym_failures += asym > tolerance
    witness_err, witness_failures = 0.0, 0
    for _ in range(trials):
        k = int(rng.integers(lo, hi + 1))
        c = rng.random((k, k)) / k
        v = verify_theorem(c, tolerance=tolerance, witness_tolerance=tolerance)
        witness_err = max(witness_err, abs(v.witness_subgroup_asymmetry - v.class_asymmetry))
        witness_failures += not v.passed
    exhaustive = []
    for k in range(2, exhaustive_max_k + 1):
        a = rng.random((k, k))
        v = verify_theorem((a + a.T) / (2 * k), tolerance=tolerance, exhaustive=True)
        exhaustive.append({"k": k, "partitions": v.exhaustive_partitions, "passed": v.passed,
                           "max_subgroup_asymmetry": v.max_subgroup_asymmetry})
    counts = [count_partitions(k) for k in range(exhaustive_max_k + 1)]
    passed = sym_failures == 0 and witness_failures == 0 and all(e["passed"] for e in exhaustive)
    return {
        "trials": trials,
        "seed": seed,
        "tolerance": tolerance,
        "symmetric": {"failures": int(sym_failures), "max_subgroup_asymmetry": worst},
        "witness": {"failures": int(witness_failures), "max_error": witness_err},
        "exhaustive": exhaustive,
        "partition_counts": counts,
        "passed": bool(passed),
    }

"""Datasets: synthetic Gaussian clusters with sibling pairs, CSV ingestion,
and seeded stratified splits."""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, IngestionError, ShapeError
from .io import atomic_write_text

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    k: int
    splits: dict = field(default_factory=dict)
    attributes: dict = field(default_factory=dict)
    image_shape: tuple | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError("inputs must be N x D with N labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ShapeError("labels outside [0, k)")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dims(self) -> int:
        return self.inputs.shape[1]

    def subset(self, name):
        """``(inputs, labels)`` of a split; the whole set if unsplit."""
        if not self.splits:
            return self.inputs, self.labels
        idx = self.splits[name]
        return self.inputs[idx], self.labels[idx]

    def class_counts(self, name=None) -> np.ndarray:
        y = self.labels if name is None else self.subset(name)[1]
        return np.bincount(y, minlength=self.k)


@dataclass
class SyntheticSpec:
    k: int = 6
    dims: int = 64
    samples_per_class: int = 300
    cluster_spread: float = 0.15
    sibling_pairs: list = field(default_factory=lambda: [(0, 1, 0.7)])
    center_low: float = 0.2
    center_high: float = 0.8
    seed: int = 0
    image_shape: tuple | None = (8, 8)

    def __post_init__(self):
        if self.k < 2 or self.dims < 1 or self.samples_per_class < 1:
            raise ConfigError("synthetic spec needs k >= 2, dims >= 1, samples_per_class >= 1")
        if not self.cluster_spread >= 0:
            raise ConfigError("cluster_spread must be >= 0")
        pairs = []
        for pair in self.sibling_pairs:
            i, j, overlap = int(pair[0]), int(pair[1]), float(pair[2])
            if not (0 <= i < self.k and 0 <= j < self.k and i != j):
                raise ConfigError(f"bad sibling pair {pair}")
            if not 0.0 <= overlap <= 1.0:
                raise ConfigError("sibling overlap must be in [0, 1]")
            pairs.append((i, j, overlap))
        self.sibling_pairs = pairs
        if self.image_shape is not None:
            self.image_shape = tuple(self.image_shape)
            if self.image_shape[0] * self.image_shape[1] != self.dims:
                self.image_shape = None


def cluster_centers(spec: SyntheticSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    centers = rng.uniform(spec.center_low, spec.center_high, size=(spec.k, spec.dims))
    moved = centers.copy()
    for i, j, overlap in spec.sibling_pairs:
        # overlap 1 puts both centers on their midpoint
        moved[i] = centers[i] + 0.5 * overlap * (centers[j] - centers[i])
        moved[j] = centers[j] + 0.5 * overlap * (centers[i] - centers[j])
    return moved


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    centers = cluster_centers(spec)
    rng = np.random.default_rng([spec.seed, 1])
    n = spec.samples_per_class
    labels = np.repeat(np.arange(spec.k), n)
    noise = rng.standard_normal((spec.k * n, spec.dims)) * spec.cluster_spread
    inputs = np.clip(centers[labels] + noise, 0.0, 1.0)
    return Dataset(inputs, labels, spec.k, image_shape=spec.image_shape)


def split(dataset: Dataset, fractions=DEFAULT_FRACTIONS, seed=0) -> Dataset:
    """Stratified train/val/test split, seeded; returns a new Dataset."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
        raise ConfigError(f"split fractions must be 3 non-negative values summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts = {name: [] for name in SPLITS}
    for c in range(dataset.k):
        idx = np.flatnonzero(dataset.labels == c)
        if 0 < idx.size < 3:
            warnings.warn(f"class {c} has only {idx.size} samples; stratification is coarse",
                          stacklevel=2)
        idx = idx[rng.permutation(idx.size)]
        sizes = _apportion(idx.size, fr)
        start = 0
        for name, size in zip(SPLITS, sizes):
            parts[name].append(idx[start:start + size])
            start += size
    splits = {name: np.sort(np.concatenate(p)) if p else np.array([], dtype=np.int64)
              for name, p in parts.items()}
    return Dataset(dataset.inputs, dataset.labels, dataset.k, splits,
                   dict(dataset.attributes), dataset.image_shape)


def _apportion(n, fractions):
    """Largest-remainder rounding of ``n * fractions`` to integers summing to n."""
    raw = n * fractions
    sizes = np.floor(raw + 1e-9).astype(int)
    remainder = n - sizes.sum()
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:remainder]] += 1
    return sizes


# -- CSV ingestion -----------------------------------------------------------


@dataclass
class CsvSchema:
    """Row layout: ``label, f_1, ..., f_D``.

    ``scale`` is ``"unit"`` for features already in [0, 1] or ``"255"`` for
    byte-valued features (divided by 255 on load).
    """

    k: int | None = None
    dims: int | None = None
    scale: str = "unit"
    header: bool = False
    image_shape: tuple | None = None


def load_csv(path, schema: CsvSchema | None = None) -> Dataset:
    schema = schema or CsvSchema()
    if schema.scale not in ("unit", "255"):
        raise ConfigError(f"unknown scale {schema.scale!r}")
    divisor = 255.0 if schema.scale == "255" else 1.0
    upper = 255.0 if schema.scale == "255" else 1.0
    text = Path(path).read_text(encoding="utf-8")
    rows, labels, problems = [], [], []
    width = schema.dims
    reader = csv.reader(io.StringIO(text))
    for ln, row in enumerate(reader, 1):
        if schema.header and ln == 1:
            continue
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            values = [float(cell) for cell in row]
        except ValueError:
            problems.append((ln, "non-numeric value"))
            continue
        label, feats = values[0], values[1:]
        if width is None:
            width = len(feats)
        if len(feats) != width or width == 0:
            problems.append((ln, f"expected {width} features, got {len(feats)}"))
            continue
        if label != int(label) or label < 0 or (schema.k is not None and label >= schema.k):
            problems.append((ln, f"label {row[0]!r} out of range"))
            continue
        if not all(0.0 <= v <= upper for v in feats):
            problems.append((ln, f"feature outside [0, {upper:g}]"))
            continue
        labels.append(int(label))
        rows.append(feats)
    if problems:
        raise IngestionError(f"{path}: {len(problems)} malformed row(s)", problems)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    k = schema.k if schema.k is not None else max(labels) + 1
    inputs = np.array(rows, dtype=np.float64) / divisor
    return Dataset(inputs, np.array(labels), k, image_shape=schema.image_shape)


def write_csv(dataset: Dataset, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for label, row in zip(dataset.labels, dataset.inputs):
        w.writerow([int(label), *(repr(float(v)) for v in row)])
    return atomic_write_text(path, buf.getvalue())


# -- attribute maps ----------------------------------------------------------


def load_attributes(path) -> dict:
    """Read ``{class_index: {attribute: value}}`` from JSON."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {int(c): dict(attrs) for c, attrs in raw.items()}


def write_attributes(attributes: dict, path):
    payload = {str(c): attrs for c, attrs in sorted(attributes.items())}
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")

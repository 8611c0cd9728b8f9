"""Soft (differentiable) and hard (count-based) confusion matrices.

Rows index the true class, columns the predicted class. Row ``i`` of a
normalized matrix estimates ``P(pred = j | true = i)``; rows of classes that
never occur are all zero.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import KindError, ShapeError, SyfarError
from .validation import check_labels, check_matrix, check_probabilities

KINDS = ("soft", "hard-count", "hard-normalized")


@dataclass
class ConfusionMatrix:
    k: int
    entries: np.ndarray
    kind: str
    counts: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KindError(f"unknown confusion kind {self.kind!r}")
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.shape != (self.k, self.k):
            raise ShapeError(f"entries shape {self.entries.shape} != ({self.k}, {self.k})")
        if self.counts is not None:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.k,):
                raise ShapeError("counts must have length k")

    @classmethod
    def empty(cls, k, kind="hard-count"):
        return cls(k, np.zeros((k, k)), kind, np.zeros(k, dtype=np.int64))

    @classmethod
    def from_array(cls, entries, kind="hard-normalized", counts=None):
        """Wrap a raw K x K array, e.g. a matrix written by hand."""
        arr = check_matrix(entries, "entries")
        if arr.shape[0] != arr.shape[1]:
            raise ShapeError("confusion matrix must be square")
        return cls(arr.shape[0], arr, kind, counts)

    @property
    def is_soft(self) -> bool:
        return self.kind == "soft"

    def normalized(self) -> "ConfusionMatrix":
        """Row-normalize a count matrix by ``max(n_i, 1)``."""
        if self.kind != "hard-count":
            return self
        denom = np.maximum(self.counts, 1)[:, None]
        return ConfusionMatrix(self.k, self.entries / denom, "hard-normalized", self.counts.copy())

    def present(self) -> np.ndarray:
        """Boolean mask of classes with at least one sample."""
        if self.counts is None:
            return np.ones(self.k, dtype=bool)
        return self.counts > 0

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        entries = self.entries.ravel()
        if self.kind == "hard-count":
            entries = [int(v) for v in entries]
        else:
            entries = entries.tolist()
        return {
            "k": int(self.k),
            "kind": self.kind,
            "counts": None if self.counts is None else [int(c) for c in self.counts],
            "entries": entries,
        }

    @classmethod
    def from_dict(cls, d) -> "ConfusionMatrix":
        try:
            k = int(d["k"])
            entries = np.array(d["entries"], dtype=np.float64).reshape(k, k)
            return cls(k, entries, d["kind"], d.get("counts"))
        except (KeyError, ValueError, TypeError) as exc:
            raise SyfarError(f"malformed confusion matrix record: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text) -> "ConfusionMatrix":
        return cls.from_dict(json.loads(text))


def _infer_k(scores, k):
    return scores.shape[1] if k is None else int(k)


def soft_confusion(probabilities, labels, k=None) -> ConfusionMatrix:
    """Average the probability vectors of each true class into its row."""
    p = check_probabilities(probabilities)
    k = _infer_k(p, k)
    if p.shape[1] != k:
        raise ShapeError(f"probabilities have {p.shape[1]} columns, expected {k}")
    y = check_labels(labels, k, p.shape[0])
    onehot = np.zeros((y.shape[0], k))
    onehot[np.arange(y.shape[0]), y] = 1.0
    acc = onehot.T @ p
    counts = np.bincount(y, minlength=k)
    return ConfusionMatrix(k, acc / np.maximum(counts, 1)[:, None], "soft", counts)


def soft_confusion_backward(grad_entries, labels, counts) -> np.ndarray:
    """Gradient w.r.t. the probability rows given ``d loss / d C``.

    Sample ``b`` contributes ``p_b / max(n_{y_b}, 1)`` to row ``y_b``, so its
    gradient is that row of ``grad_entries`` scaled by the same factor.
    """
    g = np.asarray(grad_entries, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    scale = 1.0 / np.maximum(np.asarray(counts), 1)
    return g[y] * scale[y][:, None]


def hard_confusion(scores, labels, normalize=False, k=None) -> ConfusionMatrix:
    """Count argmax predictions (ties go to the lowest class index)."""
    s = check_matrix(scores, "scores")
    k = _infer_k(s, k)
    y = check_labels(labels, k, s.shape[0])
    pred = np.argmax(s, axis=1)
    return confusion_from_predictions(y, pred, k, normalize)


def confusion_from_predictions(y_true, y_pred, k, normalize=False) -> ConfusionMatrix:
    y_true = check_labels(y_true, k)
    y_pred = check_labels(y_pred, k, y_true.shape[0])
    counts_mat = np.bincount(y_true * k + y_pred, minlength=k * k).reshape(k, k).astype(np.float64)
    cm = ConfusionMatrix(k, counts_mat, "hard-count", np.bincount(y_true, minlength=k))
    return cm.normalized() if normalize else cm


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    """Combine two matrices as if built from the concatenated samples."""
    if a.k != b.k:
        raise ShapeError(f"cannot merge K={a.k} with K={b.k}")
    if a.kind != b.kind:
        raise KindError(f"cannot merge {a.kind} with {b.kind}")
    if a.counts is None or b.counts is None:
        raise KindError("merge needs per-class counts on both operands")
    counts = a.counts + b.counts
    if a.kind == "hard-count":
        return ConfusionMatrix(a.k, a.entries + b.entries, a.kind, counts)
    mass = a.entries * a.counts[:, None] + b.entries * b.counts[:, None]
    return ConfusionMatrix(a.k, mass / np.maximum(counts, 1)[:, None], a.kind, counts)

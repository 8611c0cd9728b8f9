"""Accuracy, source-class, symmetry and target-class fairness metrics."""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import AttackSpec, attack_success_rate, attack_targets, run_attack
from .confusion import ConfusionMatrix, hard_confusion
from .exceptions import DomainError
from .nn import Model
from .symmetry import SymmetryConfig, symmetry_loss
from .validation import check_labels, check_square

TARGET_NORMALIZATIONS = ("total-mass", "as-written")


def _as_matrix(c):
    if isinstance(c, ConfusionMatrix):
        return c.entries, c.present()
    m = check_square(c)
    return m, np.ones(m.shape[0], dtype=bool)


def source_class_metrics(c):
    """Per-class accuracy (the diagonal), worst-class accuracy and the gap.

    Classes with zero samples are excluded from min and gap.
    """
    m, present = _as_matrix(c)
    if isinstance(c, ConfusionMatrix) and c.kind == "hard-count":
        m, present = c.normalized().entries, c.present()
    if not present.any():
        raise DomainError("no class has any samples; cannot report source-class metrics")
    per_class = np.diag(m).copy()
    counted = per_class[present]
    return per_class, float(counted.min()), float(counted.max() - counted.min())


def max_asymmetry_gap(c) -> float:
    m, _ = _as_matrix(c)
    if m.shape[0] < 2:
        return 0.0
    return float(np.max(np.abs(m - m.T)))


def target_shares(c, normalization="total-mass") -> np.ndarray:
    """Share of misclassification mass landing in each predicted class.

    ``total-mass`` divides column off-diagonal sums by the total off-diagonal
    mass (so shares sum to 1). ``as-written`` divides column ``j`` by the
    off-diagonal mass of every row except ``j``. A zero denominator gives 0.
    """
    if normalization not in TARGET_NORMALIZATIONS:
        raise DomainError(f"unknown normalization {normalization!r}")
    m, _ = _as_matrix(c)
    off = m.copy()
    np.fill_diagonal(off, 0.0)
    numer = off.sum(axis=0)
    total = off.sum()
    if normalization == "total-mass":
        denom = np.full(m.shape[0], total)
    else:
        denom = total - off.sum(axis=1)
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, numer / safe, 0.0)


def target_fairness(shares):
    t = np.asarray(shares, dtype=np.float64)
    return float(t.min()), float(t.max()), float(t.std())


@dataclass
class FairnessReport:
    benign_accuracy: float
    robust_accuracy: float
    per_class_benign: list
    per_class_robust: list
    min_class_accuracy: float
    accuracy_gap: float
    max_asymmetry_gap: float
    symmetry_loss_value: float
    target_shares: list
    tgt_min: float
    tgt_max: float
    tgt_std: float
    attack_success_rate: float
    class_counts: list
    target_normalization: str = "total-mass"
    normalized: bool = True
    attack: dict = field(default_factory=dict)
    benign_confusion: dict = field(default_factory=dict)
    robust_confusion: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "FairnessReport":
        return cls(**d)

    def robust_matrix(self) -> ConfusionMatrix:
        return ConfusionMatrix.from_dict(self.robust_confusion)

    def csv_row(self) -> dict:
        return {name: getattr(self, name) for name in CSV_FIELDS}


CSV_FIELDS = (
    "benign_accuracy", "robust_accuracy", "min_class_accuracy", "accuracy_gap",
    "max_asymmetry_gap", "symmetry_loss_value", "tgt_min", "tgt_max", "tgt_std",
    "attack_success_rate",
)
# metrics aggregated over seeds
STABILITY_METRICS = (
    "robust_accuracy", "benign_accuracy", "min_class_accuracy", "accuracy_gap",
    "max_asymmetry_gap", "symmetry_loss_value", "tgt_min", "tgt_max", "tgt_std",
)


def report_from_confusions(benign: ConfusionMatrix, robust: ConfusionMatrix, *,
                           normalize=True, target_normalization="total-mass",
                           sym_cfg: SymmetryConfig | None = None,
                           success_rate=None, attack=None) -> FairnessReport:
    """Fill every report field from a pair of hard count matrices."""
    k = robust.k
    notes = []
    rob_n = robust.normalized()
    ben_n = benign.normalized()
    metric_matrix = rob_n if normalize else robust
    per_robust, worst, gap = source_class_metrics(rob_n)
    per_benign = np.diag(ben_n.entries)
    absent = np.flatnonzero(~robust.present())
    if absent.size:
        notes.append(f"classes with zero samples excluded from min/gap: {absent.tolist()}")
    shares = target_shares(metric_matrix, target_normalization)
    off = metric_matrix.entries - np.diag(np.diag(metric_matrix.entries))
    if not off.any():
        notes.append("no misclassifications: target shares set to zero")
    tmin, tmax, tstd = target_fairness(shares)
    n = robust.counts.sum()
    rob_acc = float(np.trace(robust.entries) / n) if n else 0.0
    ben_acc = float(np.trace(benign.entries) / benign.counts.sum()) if benign.counts.sum() else 0.0
    if success_rate is None:
        success_rate = 1.0 - rob_acc
    return FairnessReport(
        benign_accuracy=ben_acc,
        robust_accuracy=rob_acc,
        per_class_benign=per_benign.tolist(),
        per_class_robust=per_robust.tolist(),
        min_class_accuracy=worst,
        accuracy_gap=gap,
        max_asymmetry_gap=max_asymmetry_gap(metric_matrix),
        symmetry_loss_value=symmetry_loss(metric_matrix, sym_cfg) if k >= 2 else 0.0,
        target_shares=shares.tolist(),
        tgt_min=tmin,
        tgt_max=tmax,
        tgt_std=tstd,
        attack_success_rate=float(success_rate),
        class_counts=[int(c) for c in robust.counts],
        target_normalization=target_normalization,
        normalized=bool(normalize),
        attack=attack or {},
        benign_confusion=benign.to_dict(),
        robust_confusion=robust.to_dict(),
        notes=notes,
    )


def evaluate(model: Model, inputs, labels, attack: AttackSpec, *, normalize=True,
             target_normalization="total-mass",
             sym_cfg: SymmetryConfig | None = None) -> FairnessReport:
    """Benign pass, attack, and the full metric report on the adversarial predictions."""
    k = model.num_classes
    y = check_labels(labels, k)
    benign = hard_confusion(model.forward(inputs), y, k=k)
    adv = run_attack(model, inputs, y, attack)
    robust = hard_confusion(model.forward(adv), y, k=k)
    targets = attack_targets(attack, y, k)
    rate = attack_success_rate(model, inputs, adv, y, attack.mode, targets)
    return report_from_confusions(benign, robust, normalize=normalize,
                                  target_normalization=target_normalization,
                                  sym_cfg=sym_cfg, success_rate=rate,
                                  attack=attack.to_dict())


# -- plot-ready grids --------------------------------------------------------


def _grid_tsv(rows, k):
    buf = io.StringIO()
    buf.write("true\\pred\t" + "\t".join(str(j) for j in range(k)) + "\n")
    for i, row in enumerate(rows):
        buf.write(f"{i}\t" + "\t".join(row) + "\n")
    return buf.getvalue()


def confusion_tsv(c) -> str:
    m, _ = _as_matrix(c)
    return _grid_tsv([[repr(float(v)) for v in row] for row in m], m.shape[0])


def asymmetry_tsv(c) -> str:
    """Upper-triangle ``|C_ij - C_ji|``; cells on or below the diagonal are blank."""
    m, _ = _as_matrix(c)
    k = m.shape[0]
    d = np.abs(m - m.T)
    return _grid_tsv([[repr(float(d[i, j])) if j > i else "" for j in range(k)]
                      for i in range(k)], k)

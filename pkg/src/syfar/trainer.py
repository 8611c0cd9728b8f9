"""Adversarial training with a symmetry (or spectral-norm) confusion regularizer.

Each step: clean pass, attack against the current weights, adversarial pass,
soft confusion of the adversarial batch, regularizer, weighted total loss,
one SGD update.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attacks import AttackSpec, RectSpec, run_attack
from .confusion import ConfusionMatrix, merge, soft_confusion, soft_confusion_backward
from .exceptions import ConfigError, NumericError
from .nn import Model, cross_entropy, sgd_step, softmax, softmax_backward
from .spectral import spectral_penalty, spectral_value_and_gradient
from .symmetry import SymmetryConfig, symmetry_loss, symmetry_loss_gradient

REGULARIZERS = ("none", "symmetry", "spectral")


def default_training_attack(image_shape=(8, 8)) -> AttackSpec:
    """Desk-scale rectangle-occlusion attack used for adversarial training."""
    return AttackSpec(family="rectangle-occlusion", step_size=20 / 255, iterations=100,
                      rect=RectSpec.default_for(image_shape), image_shape=image_shape)


@dataclass
class TrainConfig:
    lambda_clean: float = 1.0
    lambda_adv: float = 1.0
    lambda_sym: float = 1.0
    regularizer: str = "symmetry"
    attack: AttackSpec = field(default_factory=default_training_attack)
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 0.05
    seed: int = 0
    mode: str = "scratch"
    checkpoint: str | None = None
    symmetry: SymmetryConfig = field(default_factory=SymmetryConfig)

    def __post_init__(self):
        lams = (self.lambda_clean, self.lambda_adv, self.lambda_sym)
        if any(l < 0 for l in lams):
            raise ConfigError("loss weights must be non-negative")
        if not any(l > 0 for l in lams):
            raise ConfigError("at least one loss weight must be > 0")
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"unknown regularizer {self.regularizer!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.mode not in ("scratch", "fine-tune"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "fine-tune" and not self.checkpoint:
            raise ConfigError("fine-tune mode needs a checkpoint")
        if isinstance(self.attack, dict):
            self.attack = AttackSpec.from_dict(self.attack)
        if isinstance(self.symmetry, dict):
            self.symmetry = SymmetryConfig(**self.symmetry)

    def with_(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def uses_regularizer(self) -> bool:
        return self.regularizer != "none" and self.lambda_sym > 0


@dataclass
class EpochRecord:
    epoch: int
    clean_loss: float
    adv_loss: float
    sym_loss: float
    reg_loss: float
    total_loss: float
    epoch_sym_loss: float
    seconds: float
    val_benign_accuracy: float | None = None
    val_robust_accuracy: float | None = None

    def as_row(self) -> dict:
        return dataclasses.asdict(self)


EPOCH_FIELDS = tuple(f.name for f in dataclasses.fields(EpochRecord))


def regularizer_value_and_grad(kind, probs, labels, k, sym_cfg, cm=None):
    """Regularizer on the soft confusion of ``probs`` and ``d reg / d logits``.

    ``cm`` may pass in that soft confusion when the caller already has it.
    """
    if cm is None:
        cm = soft_confusion(probs, labels, k)
    if kind == "symmetry":
        value, g_cm = symmetry_loss(cm, sym_cfg), symmetry_loss_gradient(cm, sym_cfg)
    elif kind == "spectral":
        value, g_cm = spectral_value_and_gradient(cm)
    else:
        raise ConfigError(f"no gradient for regularizer {kind!r}")
    g_p = soft_confusion_backward(g_cm, labels, cm.counts)
    return value, softmax_backward(probs, g_p)


def composite_loss(model: Model, x, y, x_adv, cfg: TrainConfig, k=None):
    """Weighted loss and its parameter gradients, left on ``model``.

    The adversarial inputs are taken as given (not differentiated through).
    Returns the loss dictionary and the soft confusion of the adversarial batch.
    """
    k = k or model.num_classes
    model.zero_grad()
    clean, g_clean = cross_entropy(model.forward(x), y)
    model.backward(cfg.lambda_clean * g_clean)
    z_adv = model.forward(x_adv)
    adv, g_adv = cross_entropy(z_adv, y)
    probs = softmax(z_adv)
    cm = soft_confusion(probs, y, k)
    sym = symmetry_loss(cm, cfg.symmetry)
    g = cfg.lambda_adv * g_adv
    reg = 0.0
    if cfg.uses_regularizer() and cfg.regularizer == "symmetry":
        reg = sym
        g_p = soft_confusion_backward(symmetry_loss_gradient(cm, cfg.symmetry), y, cm.counts)
        g = g + cfg.lambda_sym * softmax_backward(probs, g_p)
    elif cfg.uses_regularizer():
        reg, g_reg = regularizer_value_and_grad(cfg.regularizer, probs, y, k, cfg.symmetry, cm)
        g = g + cfg.lambda_sym * g_reg
    elif cfg.regularizer == "spectral":
        reg = spectral_penalty(cm)
    elif cfg.regularizer == "symmetry":
        reg = sym
    model.backward(g)
    lam_reg = cfg.lambda_sym if cfg.regularizer != "none" else 0.0
    total = cfg.lambda_clean * clean + cfg.lambda_adv * adv + lam_reg * reg
    losses = {"clean": clean, "adv": adv, "sym": sym, "reg": reg, "total": total}
    return losses, cm


def train_step(model: Model, x, y, cfg: TrainConfig, k=None):
    """One training step in place; returns ``(model, losses)``.

    ``losses`` also carries the adversarial soft confusion under ``"confusion"``.
    """
    x_adv = run_attack(model, x, y, cfg.attack)
    losses, cm = composite_loss(model, x, y, x_adv, cfg, k)
    if not all(math.isfinite(v) for v in losses.values()):
        raise NumericError(f"non-finite loss: {losses}")
    sgd_step(model, cfg.learning_rate)
    losses["confusion"] = cm
    return model, losses


def iterate_batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train(model: Model, dataset, cfg: TrainConfig, eval_attack: AttackSpec | None = None,
          validate: bool = True, on_epoch=None):
    """Run ``cfg.epochs`` epochs on a copy of ``model``.

    Returns ``(trained_model, records)``. ``dataset`` is a
    :class:`~syfar.data.Dataset`; its ``train`` split is used when present.
    Validation accuracies are filled when ``validate`` and a ``val`` split
    exist; they are excluded from ``seconds``.
    """
    model = model.copy()
    x_all, y_all = dataset.subset("train")
    k = dataset.k
    rng = np.random.default_rng(cfg.seed)
    records = []
    for epoch in range(cfg.epochs):
        sums = dict.fromkeys(("clean", "adv", "sym", "reg", "total"), 0.0)
        n_batches = 0
        epoch_cm = ConfusionMatrix(k, np.zeros((k, k)), "soft", np.zeros(k, dtype=np.int64))
        t0 = time.perf_counter()
        for idx in iterate_batches(x_all.shape[0], cfg.batch_size, rng):
            _, losses = train_step(model, x_all[idx], y_all[idx], cfg, k)
            for key in sums:
                sums[key] += losses[key]
            epoch_cm = merge(epoch_cm, losses["confusion"])
            n_batches += 1
        seconds = time.perf_counter() - t0
        means = {key: v / max(n_batches, 1) for key, v in sums.items()}
        rec = EpochRecord(epoch, means["clean"], means["adv"], means["sym"], means["reg"],
                          means["total"], symmetry_loss(epoch_cm, cfg.symmetry), seconds)
        if validate and dataset.splits and len(dataset.splits.get("val", ())):
            from .metrics import evaluate

            xv, yv = dataset.subset("val")
            rep = evaluate(model, xv, yv, eval_attack or cfg.attack)
            rec.val_benign_accuracy = rep.benign_accuracy
            rec.val_robust_accuracy = rep.robust_accuracy
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return model, records


# -- scikit-learn style estimator -------------------------------------------



class SyFARClassifier(ClassifierMixin, BaseEstimator):
    """Dense ReLU classifier fit with symmetry-regularized adversarial training.

    Inputs must lie in ``[0, 1]``. ``attack`` is an :class:`AttackSpec` or a
    dict of its fields; ``None`` uses the desk-scale rectangle-occlusion
    attack (which needs square image-shaped inputs). ``init_model`` starts
    from an existing :class:`Model` (fine-tuning).
    """

    def __init__(self, hidden_sizes=(32,), lambda_clean=1.0, lambda_adv=1.0, lambda_sym=1.0,
                 regularizer="symmetry", attack=None, sym_epsilon=None, epochs=5,
                 batch_size=64, learning_rate=0.05, random_state=0, init_model=None):
        self.hidden_sizes = hidden_sizes
        self.lambda_clean = lambda_clean
        self.lambda_adv = lambda_adv
        self.lambda_sym = lambda_sym
        self.regularizer = regularizer
        self.attack = attack
        self.sym_epsilon = sym_epsilon
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.init_model = init_model

    def _train_config(self, n_features):
        attack = self.attack
        if attack is None:
            side = math.isqrt(n_features)
            if side * side != n_features:
                raise ConfigError("default attack needs square image inputs; pass attack=")
            attack = default_training_attack((side, side))
        elif isinstance(attack, dict):
            attack = AttackSpec.from_dict(attack)
        sym = (SymmetryConfig() if self.sym_epsilon is None
               else SymmetryConfig(self.sym_epsilon, "fixed"))
        return TrainConfig(self.lambda_clean, self.lambda_adv, self.lambda_sym, self.regularizer,
                           attack, self.epochs, self.batch_size, self.learning_rate,
                           int(self.random_state or 0), symmetry=sym)

    def fit(self, X, y):
        from .data import Dataset

        X, y = check_X_y(X, y, dtype=np.float64)
        if X.min() < 0 or X.max() > 1:
            raise ValueError("SyFARClassifier expects inputs scaled to [0, 1]")
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        k = len(self.classes_)
        if k < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        cfg = self._train_config(X.shape[1])
        if self.init_model is not None:
            model = self.init_model.copy()
            if model.input_dim != X.shape[1] or model.num_classes != k:
                raise ValueError("init_model does not match the data shape")
        else:
            model = Model.initialize(X.shape[1], self.hidden_sizes, k, seed=cfg.seed)
        self.model_, self.history_ = train(model, Dataset(X, y_enc, k), cfg, validate=False)
        self.train_config_ = cfg
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.forward(X)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def fairness_report(self, X, y, attack=None):
        """Benign/robust accuracy and fairness metrics under ``attack``."""
        from .metrics import evaluate

        check_is_fitted(self, "model_")
        X, y = check_X_y(X, y, dtype=np.float64)
        y_enc = np.searchsorted(self.classes_, y)
        if np.any(self.classes_[np.minimum(y_enc, len(self.classes_) - 1)] != y):
            raise ValueError("y contains labels unseen during fit")
        attack = attack or self.train_config_.attack
        if isinstance(attack, dict):
            attack = AttackSpec.from_dict(attack)
        return evaluate(self.model_, X, y_enc, attack, sym_cfg=self.train_config_.symmetry)

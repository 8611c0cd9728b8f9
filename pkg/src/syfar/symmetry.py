"""Pairwise asymmetry penalty and the symmetry loss built from it.

For an unordered class pair with off-diagonal masses ``a = C[i, j]`` and
``b = C[j, i]`` the penalty is ``|a - b| / (a + b + eps) * (a + b)``: relative
imbalance weighted by how much the two classes are confused at all.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .confusion import ConfusionMatrix
from .exceptions import ConfigError, DomainError, KindError
from .validation import check_square


@dataclass(frozen=True)
class SymmetryConfig:
    """``epsilon_mode='one-over-k'`` ignores ``epsilon`` and uses ``1 / K``."""

    epsilon: float | None = None
    epsilon_mode: str = "one-over-k"

    def __post_init__(self):
        if self.epsilon_mode not in ("fixed", "one-over-k"):
            raise ConfigError(f"unknown epsilon_mode {self.epsilon_mode!r}")
        if self.epsilon_mode == "fixed" and (self.epsilon is None or not self.epsilon > 0):
            raise ConfigError("fixed epsilon must be > 0")

    def resolve(self, k: int) -> float:
        if self.epsilon_mode == "fixed":
            return float(self.epsilon)
        return 1.0 / k


def pair_penalty(a: float, b: float, epsilon: float) -> float:
    if not (np.isfinite(a) and np.isfinite(b)) or a < 0 or b < 0:
        raise DomainError(f"pair masses must be finite and non-negative, got {a}, {b}")
    if not epsilon > 0:
        raise DomainError("epsilon must be > 0")
    s = a + b
    return abs(a - b) / (s + epsilon) * s


def _entries(c):
    if isinstance(c, ConfusionMatrix):
        return c.entries
    return check_square(c)


def _epsilon(cfg, k):
    if cfg is None:
        return 1.0 / k
    if isinstance(cfg, SymmetryConfig):
        return cfg.resolve(k)
    return float(cfg)


def symmetry_loss(c, cfg: SymmetryConfig | float | None = None) -> float:
    """Sum of ``pair_penalty`` over all ``i < j``.

    ``cfg`` may be a :class:`SymmetryConfig`, a bare epsilon, or None for 1/K.
    """
    m = _entries(c)
    k = m.shape[0]
    if k < 2:
        raise DomainError("symmetry loss needs K >= 2")
    if np.any(m < 0):
        raise DomainError("confusion entries must be non-negative")
    eps = _epsilon(cfg, k)
    s = m + m.T
    terms = np.abs(m - m.T) / (s + eps) * s
    return float(np.triu(terms, 1).sum())


def symmetry_loss_gradient(c, cfg: SymmetryConfig | float | None = None) -> np.ndarray:
    """``d L_sym / d C`` as a K x K matrix; zero on the diagonal.

    The kink at ``a == b`` takes subgradient 0.
    """
    if isinstance(c, ConfusionMatrix) and not c.is_soft:
        raise KindError("gradient is only defined for soft confusion matrices")
    m = _entries(c)
    k = m.shape[0]
    if k < 2:
        raise DomainError("symmetry loss needs K >= 2")
    eps = _epsilon(cfg, k)
    mt = m.T
    s = m + mt
    d = m - mt
    denom = s + eps
    # d/da of |a-b| s/(s+eps) = sign(a-b) s/(s+eps) + |a-b| eps/(s+eps)^2
    grad = np.sign(d) * s / denom + np.abs(d) * eps / denom**2
    np.fill_diagonal(grad, 0.0)
    return grad

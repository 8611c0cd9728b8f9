"""Spectral-norm baseline regularizer on the off-diagonal confusion mass."""
from __future__ import annotations

import numpy as np

from .confusion import ConfusionMatrix
from .exceptions import ConvergenceError
from .validation import check_square


def off_diagonal(c) -> np.ndarray:
    m = np.array(c.entries if isinstance(c, ConfusionMatrix) else check_square(c), dtype=np.float64)
    np.fill_diagonal(m, 0.0)
    return m


def top_singular_triplet(m, tol=1e-8, max_iter=1000):
    """Largest singular value of ``m`` with its singular vectors.

    Power iteration on ``m.T @ m``; stops once successive right vectors agree
    to ``tol`` (max-norm), which also pins sigma far below ``tol`` relative.
    """
    m = np.asarray(m, dtype=np.float64)
    k = m.shape[1]
    if not np.any(m):
        return 0.0, np.zeros(m.shape[0]), np.zeros(k)
    gram = m.T @ m
    v = np.full(k, 1.0 / np.sqrt(k))
    if np.linalg.norm(gram @ v) < 1e-300:
        # start vector in the null space; fall back to the heaviest column
        v = np.zeros(k)
        v[np.argmax(np.linalg.norm(m, axis=0))] = 1.0
    for it in range(1, max_iter + 1):
        w = gram @ v
        nrm = np.linalg.norm(w)
        w = w / nrm
        if np.max(np.abs(w - v)) <= tol:
            v = w
            break
        v = w
    else:
        raise ConvergenceError("spectral power iteration did not converge", max_iter)
    mv = m @ v
    sigma = float(np.linalg.norm(mv))
    return sigma, mv / sigma, v


def spectral_penalty(c, tol=1e-8, max_iter=1000) -> float:
    sigma, _, _ = top_singular_triplet(off_diagonal(c), tol, max_iter)
    return sigma


def spectral_penalty_gradient(c, tol=1e-8, max_iter=1000) -> np.ndarray:
    """``d sigma / d C = u v^T`` restricted to off-diagonal entries."""
    return spectral_value_and_gradient(c, tol, max_iter)[1]


def spectral_value_and_gradient(c, tol=1e-8, max_iter=1000):
    sigma, u, v = top_singular_triplet(off_diagonal(c), tol, max_iter)
    grad = np.outer(u, v)
    np.fill_diagonal(grad, 0.0)
    return sigma, grad

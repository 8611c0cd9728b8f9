"""Input validation helpers.

Thin wrappers that coerce inputs to float64/int arrays and raise the
package's own exception types, so callers get a consistent error surface.
"""
from __future__ import annotations

import numpy as np

from .exceptions import DomainError, NumericError, ShapeError


def check_matrix(x, name="array", ndim=2, finite=True) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if finite and not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains NaN or Inf")
    return arr


def check_square(c, name="confusion matrix") -> np.ndarray:
    arr = check_matrix(c, name)
    if arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"{name} must be square, got {arr.shape}")
    return arr


def check_labels(labels, k: int, n: int | None = None) -> np.ndarray:
    """Return labels as an int64 vector, checking range ``[0, k)`` and length."""
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DomainError("labels must be integer class indices")
    y = y.astype(np.int64)
    if n is not None and y.shape[0] != n:
        raise ShapeError(f"expected {n} labels, got {y.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= k):
        bad = int(y[(y < 0) | (y >= k)][0])
        raise IndexError(f"label {bad} outside [0, {k})")
    return y


def check_probabilities(p, atol=1e-6) -> np.ndarray:
    p = check_matrix(p, "probabilities")
    if np.any(p < -atol):
        raise DomainError("probabilities must be non-negative")
    sums = p.sum(axis=1)
    if p.shape[0] and not np.allclose(sums, 1.0, atol=atol, rtol=0):
        raise DomainError("probability rows must sum to 1")
    return p

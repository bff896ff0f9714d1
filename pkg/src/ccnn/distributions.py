"""Score matrices, per-pixel label distributions and stable softmax.

Scores and distributions are plain ``float64`` arrays of shape ``(n, m)``:
one row per pixel, one column per label (label 0 is background).  The
vectorized layout is pixel-major, so entry ``(i, l)`` sits at ``i * m + l``.
"""

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an array violates the shape or finiteness contract."""


ROW_SUM_TOL = 1e-9


def as_scores(scores):
    """Validate and return an ``(n, m)`` score matrix as a read-only array."""
    f = np.array(scores, dtype=np.float64)
    if f.ndim != 2:
        raise InvalidInputError(f"scores must be 2-d (n, m), got shape {f.shape}")
    n, m = f.shape
    if n < 1 or m < 2:
        raise InvalidInputError(f"need n >= 1 pixels and m >= 2 labels, got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise InvalidInputError("scores contain non-finite entries")
    f.setflags(write=False)
    return f


def check_distribution(p, tol=ROW_SUM_TOL):
    """Validate an ``(n, m)`` row-stochastic matrix and return it as float64."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise InvalidInputError(f"distribution must be 2-d (n, m>=2), got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidInputError("distribution entries must be finite and nonnegative")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > tol:
        raise InvalidInputError("distribution rows must sum to 1")
    return p


def log_sum_exp(row):
    """Return ``log(sum(exp(row)))`` using a max shift.

    Single-element input returns the element itself.
    """
    v = np.asarray(row, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidInputError("log_sum_exp of an empty row")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("log_sum_exp input must be finite")
    if v.size == 1:
        return float(v[0])
    c = v.max()
    return float(c + np.log(np.sum(np.exp(v - c))))


def row_log_sum_exp(f):
    """Row-wise log-sum-exp of an ``(n, m)`` array (no validation)."""
    c = f.max(axis=-1, keepdims=True)
    return (c + np.log(np.sum(np.exp(f - c), axis=-1, keepdims=True)))[..., 0]


def normalized_exp(f):
    """Row-normalize ``exp(f)`` with a per-row max shift (no validation)."""
    e = np.exp(f - f.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(scores):
    """Per-pixel softmax of an ``(n, m)`` score matrix.

    >>> softmax([[0.0, np.log(3.0)]])
    array([[0.25, 0.75]])
    """
    return normalized_exp(as_scores(scores))

"""Cross entropy, KL divergence and their gradient with respect to the scores."""

import numpy as np

from .distributions import InvalidInputError


def _pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {q.shape}")
    return p, q


def _xlogy(x, y):
    # 0 * log(anything) = 0
    out = np.zeros_like(x)
    nz = x != 0
    with np.errstate(divide="ignore"):
        out[nz] = x[nz] * np.log(y[nz])
    return out


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    return -float(np.sum(_xlogy(p, p)))


def cross_entropy(p, q):
    """``-sum_i sum_l p_i(l) log q_i(l)`` with ``0 log 0 = 0``."""
    p, q = _pair(p, q)
    return -float(np.sum(_xlogy(p, q)))


def kl_divergence(p, q):
    """``KL(P || Q)`` summed over pixels."""
    p, q = _pair(p, q)
    return float(np.sum(_xlogy(p, p) - _xlogy(p, q)))


def score_gradient(p, q):
    """Gradient of ``cross_entropy(p, softmax(f))`` w.r.t. the scores: ``q - p``."""
    p, q = _pair(p, q)
    return q - p

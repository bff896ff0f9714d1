"""Small score models with hand-written backward passes.

A scorer maps a feature grid (``(H, W, d)`` or ``(n, d)``) to an ``(n, m)``
score matrix.  ``backward`` takes the gradient of a loss w.r.t. those scores
and returns the gradient w.r.t. the flat parameter vector; it always refers
to the most recent ``forward`` call.
"""

import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class LinearScorer:
    """Per-pixel log-linear model: ``scores = X W + bias``."""

    def __init__(self, d, m, init_seed=0, init_std=0.01):
        if d < 1 or m < 1:
            raise ValueError("d and m must be positive")
        rng = np.random.default_rng(init_seed)
        self.d, self.m = d, m
        self.weight = rng.normal(0.0, init_std, size=(d, m))
        self.bias = np.zeros(m)
        self._x = None

    def forward(self, features):
        x = np.asarray(features, dtype=np.float64).reshape(-1, self.d)
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad_scores):
        if self._x is None:
            raise RuntimeError("backward called before forward")
        g = np.asarray(grad_scores, dtype=np.float64)
        return np.concatenate([(self._x.T @ g).ravel(), g.sum(axis=0)])

    def preactivations(self, features):
        return None

    def get_params(self):
        return np.concatenate([self.weight.ravel(), self.bias])

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.num_params:
            raise ValueError(f"expected {self.num_params} parameters, got {theta.size}")
        self.weight = theta[: self.d * self.m].reshape(self.d, self.m).copy()
        self.bias = theta[self.d * self.m :].copy()

    @property
    def num_params(self):
        return self.d * self.m + self.m


def linear_scorer(d, m, init_seed=0):
    return LinearScorer(d, m, init_seed)


def _im2col(x, k):
    """``(H, W, d)`` -> ``(H*W, d*k*k)`` patches with zero padding."""
    r = k // 2
    padded = np.pad(x, ((r, r), (r, r), (0, 0)))
    win = sliding_window_view(padded, (k, k), axis=(0, 1))  # (H, W, d, k, k)
    h, w = x.shape[:2]
    return win.reshape(h * w, -1)


class ConvScorer:
    """``k x k`` convolution, ReLU, then a 1x1 convolution to ``m`` scores.

    With ``channels=0`` the hidden layer is dropped and the ``k x k``
    convolution produces the scores directly.  Padding keeps the spatial
    size, so ``n = H * W``.
    """

    def __init__(self, d, channels, kernel_size, m, init_seed=0, last_std=0.01):
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        rng = np.random.default_rng(init_seed)
        self.d, self.channels, self.k, self.m = d, channels, kernel_size, m
        fan_in = d * kernel_size * kernel_size
        if channels:
            self.w1 = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, channels))
            self.b1 = np.zeros(channels)
            self.w2 = rng.normal(0.0, last_std, size=(channels, m))
        else:
            self.w1 = np.zeros((fan_in, 0))
            self.b1 = np.zeros(0)
            self.w2 = rng.normal(0.0, last_std, size=(fan_in, m))
        self.b2 = np.zeros(m)
        self._cache = None

    def _cols(self, features):
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.d:
            raise ValueError(f"conv scorer expects (H, W, {self.d}) features, got {x.shape}")
        return _im2col(x, self.k)

    def preactivations(self, features):
        if not self.channels:
            return None
        return self._cols(features) @ self.w1 + self.b1

    def forward(self, features):
        cols = self._cols(features)
        if self.channels:
            z = cols @ self.w1 + self.b1
            h = np.maximum(z, 0.0)
        else:
            z, h = None, cols
        self._cache = (cols, z, h)
        return h @ self.w2 + self.b2

    def backward(self, grad_scores):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        cols, z, h = self._cache
        g = np.asarray(grad_scores, dtype=np.float64)
        dw2 = h.T @ g
        db2 = g.sum(axis=0)
        if self.channels:
            dz = (g @ self.w2.T) * (z > 0)
            dw1 = cols.T @ dz
            db1 = dz.sum(axis=0)
        else:
            dw1, db1 = self.w1, self.b1
        return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])

    def _shapes(self):
        return [self.w1.shape, self.b1.shape, self.w2.shape, self.b2.shape]

    def get_params(self):
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.num_params:
            raise ValueError(f"expected {self.num_params} parameters, got {theta.size}")
        parts, at = [], 0
        for shape in self._shapes():
            size = int(np.prod(shape))
            parts.append(theta[at : at + size].reshape(shape).copy())
            at += size
        self.w1, self.b1, self.w2, self.b2 = parts

    @property
    def num_params(self):
        return sum(int(np.prod(s)) for s in self._shapes())


def conv_scorer(channels, kernel_size, m, init_seed=0, d=None):
    """Conv scorer over ``d`` input channels (defaults to ``m``)."""
    return ConvScorer(m if d is None else d, channels, kernel_size, m, init_seed)


def _rel_error(a, b, floor=1e-7):
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(scorer, features, probe_count=20, h=1e-5, seed=0, kink_margin=10.0):
    """Max relative error between ``backward`` and central differences.

    The loss probed is ``sum(G * scores)`` for a fixed random ``G``, so the
    check exercises the full parameter Jacobian.  Probes whose ``+-kink_margin*h``
    perturbation flips the sign of any ReLU preactivation are redrawn.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(seed)
    theta = scorer.get_params().copy()
    scores = scorer.forward(features)
    upstream = rng.normal(size=scores.shape)
    analytic = scorer.backward(upstream)
    base_signs = None
    pre = scorer.preactivations(features)
    if pre is not None:
        base_signs = pre > 0

    def loss(t):
        scorer.set_params(t)
        return float(np.sum(upstream * scorer.forward(features)))

    def near_kink(idx):
        if base_signs is None:
            return False
        for sgn in (1.0, -1.0):
            t = theta.copy()
            t[idx] += sgn * kink_margin * h
            scorer.set_params(t)
            if np.any((scorer.preactivations(features) > 0) != base_signs):
                return True
        return False

    worst = 0.0
    try:
        for _ in range(probe_count):
            for _attempt in range(100):
                idx = int(rng.integers(theta.size))
                if not near_kink(idx):
                    break
            tp, tm = theta.copy(), theta.copy()
            tp[idx] += h
            tm[idx] -= h
            numeric = (loss(tp) - loss(tm)) / (2.0 * h)
            worst = max(worst, _rel_error(analytic[idx], numeric))
    finally:
        scorer.set_params(theta)
        scorer.forward(features)
    return worst


def save_parameters(path, theta):
    """Write ``theta`` as a little-endian uint64 length then float64 values."""
    theta = np.asarray(theta, dtype="<f8").ravel()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", theta.size))
        fh.write(theta.tobytes())


def load_parameters(path):
    with open(path, "rb") as fh:
        (size,) = struct.unpack("<Q", fh.read(8))
        data = fh.read()
    if len(data) != 8 * size:
        raise ValueError(f"checkpoint holds {len(data)} bytes, expected {8 * size}")
    return np.frombuffer(data, dtype="<f8").astype(np.float64)

#!/usr/bin/env python3
# Finite-difference checks for every gradient the training loop relies on.

import numpy as np

from ccnn.dual_solver import dual_gradient, dual_value
from ccnn.oracle import random_instance
from ccnn.scorer import ConvScorer, LinearScorer, gradient_check, linear_scorer

rng = np.random.default_rng(0)
features = rng.normal(size=(8, 8, 3))

# %% scorers: relative error between backward() and central differences
print("linear:", gradient_check(linear_scorer(3, 4), features))
# relu kinks break finite differences, so probes near a kink are resampled
print("conv 3x3, 8 channels:", gradient_check(ConvScorer(3, 8, 3, 4, last_std=0.5), features))

# a deliberately wrong backward is caught straight away
class Flipped(LinearScorer):
    def backward(self, grad_scores):
        return -super().backward(grad_scores)

print("sign-flipped backward:", gradient_check(Flipped(3, 4), features))

# %% the dual gradient
f, cs = random_instance(rng)
lam = rng.uniform(0.1, 2.0, size=cs.k)
g = dual_gradient(lam, f, cs)
for h in (1e-2, 1e-4, 1e-6):
    fd = [(dual_value(lam + h * e, f, cs) - dual_value(lam - h * e, f, cs)) / (2 * h) for e in np.eye(cs.k)]
    print(f"h={h:g}: max |fd - grad| = {np.max(np.abs(np.array(fd) - g)):.1e}")

# the same checks, with thresholds and an exit code: `ccnn gradcheck`

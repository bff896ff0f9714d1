#!/usr/bin/env python3
# Turning image-level tags into linear constraints on the per-pixel output.

import numpy as np

from ccnn.constraints import ConstraintConfig
from ccnn.distributions import softmax
from ccnn.dual_solver import solve
from ccnn.synthdata import generate
from ccnn.trainer import Mode, build_constraints

ex = generate(1, 16, 4, noise_std=0.5, seed=7)[0]
print("ground truth mask:\n", ex.mask)
print("tags:", sorted(ex.tags), " size bits (True = more than 10% of the image):", ex.size_bits)

cfg = ConstraintConfig()
print(cfg)

# %% what each training mode asks of the output
for mode in Mode:
    cs = build_constraints(ex, mode, cfg)
    print(f"{mode.value:17s} k={cs.k}:", [f"{r.tag.value}>={r.bound:g}" for r in cs.rows])

# %% rows are JSON-friendly, so instances can be saved and solved from the CLI
cs = build_constraints(ex, Mode.CCNN_FULL, cfg)
print(cs.to_list()[0]["tag"], cs.to_list()[0]["bound"], len(cs.to_list()[0]["coeffs"]), "coefficients")

# %% project an untrained model's guess onto them
# scores are just the noisy features here, a stand-in for a classifier
scores = ex.features.reshape(-1, 4)
q = softmax(scores)
p, state = solve(scores, cs)
print("violations before:", np.round(np.maximum(cs.violations(q), 0), 2))
# size rows cap "small" labels at 1% of the image even though the bit only says
# "under 10%", so they stay violated and their multipliers sit at the slack weight
print("violations after: ", np.round(np.maximum(cs.violations(p), 0), 4))
print("label mass before:", np.round(q.sum(axis=0), 1), " after:", np.round(p.sum(axis=0), 1))
print("pixel accuracy of argmax before/after:",
      np.mean(q.argmax(1) == ex.mask.ravel()), np.mean(p.argmax(1) == ex.mask.ravel()))

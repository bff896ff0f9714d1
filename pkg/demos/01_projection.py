#!/usr/bin/env python3
# Projecting a score matrix onto one linear constraint, and checking the
# answer three different ways.

import math

import numpy as np

from ccnn.constraints import ConstraintRow, assemble
from ccnn.dual_solver import SolverConfig, solve
from ccnn.loss import kl_divergence
from ccnn.oracle import bisection_oracle, grid_oracle, primal_descent_oracle

# %% the smallest interesting case
# two pixels, two labels, flat scores, and we insist on 1.5 pixels' worth of label 0
scores = np.zeros((2, 2))
row = ConstraintRow(pixels=[0, 1], labels=[0, 0], values=[1.0, 1.0], bound=1.5)
cs = assemble([row], n=2, m=2)

p, state = solve(scores, cs, SolverConfig(tolerance=1e-10, max_iters=500))
print("P =\n", p)
print("lambda =", state.lam, " vs ln 3 =", math.log(3))  # symmetric, so each pixel gets 0.75
print("iterations:", state.iterations, " converged:", state.converged)

# %% the dual climbs monotonically
print("dual trace:", np.round(state.dual_values[:6], 6), "...")
assert np.all(np.diff(state.dual_values) >= 0)

# %% independent reference solvers
pb, lam_b = bisection_oracle(scores, cs)  # 1-D root find on the multiplier
pg, lam_g = grid_oracle(scores, cs)  # brute-force grid over the multiplier
pp = primal_descent_oracle(scores, cs)  # penalty method on P itself, no multipliers
for name, ref in [("bisection", pb), ("grid", pg), ("primal", pp)]:
    print(f"KL(solver || {name}) = {kl_divergence(p, ref):.2e}")

# %% soft rows give up at their slack weight
# asking for 2 pixels of label 0 in a 1-pixel image is impossible;
# with slack weight 2 the multiplier stops at 2 instead of running away
bad = assemble([ConstraintRow([0], [0], [1.0], 2.0, slack_weight=2.0)], 1, 2)
p_bad, s_bad = solve(np.zeros((1, 2)), bad)
print("infeasible soft row: lambda =", s_bad.lam, " P =", p_bad, " violation =", s_bad.max_violation)

"""Reference solvers for the constrained projection.

These are slow and deliberately built on different principles than
:func:`ccnn.dual_solver.solve` (bisection on a monotone scalar function,
exhaustive grid search of the dual, primal mirror descent with a penalty),
so that agreement between them and the shipped solver means something.
"""

import math

import numba
import numpy as np

from .distributions import InvalidInputError, as_scores, normalized_exp, row_log_sum_exp
from .dual_solver import HARD_DUAL_CAP, biased_distribution


def bisection_oracle(scores, row):
    """Solve a single-row projection by bisection on the dual variable.

    ``g(lam) = A vec(P(lam)) - b`` is nondecreasing in ``lam`` (its
    derivative is a variance), so the optimal ``lam`` is 0 if ``g(0) >= 0``,
    the slack bound if ``g(beta) < 0``, and the root of ``g`` otherwise.
    Bisection runs until the bracket stops shrinking.  ``row`` is a one-row
    :class:`ConstraintSet`.
    """
    if row.k != 1:
        raise InvalidInputError(f"bisection oracle needs exactly one row, got {row.k}")
    f = as_scores(scores)
    b = row.bounds[0]
    beta = min(row.betas[0], HARD_DUAL_CAP)

    def g(lam):
        return float(row.apply(biased_distribution(f, row, [lam]))[0] - b)

    if g(0.0) >= 0:
        lam = 0.0
    else:
        hi = 1.0
        while hi < beta and g(hi) < 0:
            hi *= 2.0
        hi = min(hi, beta)
        if g(hi) < 0:
            lam = hi
        else:
            lo = 0.0
            while True:
                mid = 0.5 * (lo + hi)
                if mid in (lo, hi):
                    break
                gm = g(mid)
                if gm == 0.0:
                    break
                if gm < 0:
                    lo = mid
                else:
                    hi = mid
            lam = mid
    lam = np.array([lam])
    return biased_distribution(f, row, lam), lam


def _dual_on_grid(f, A, b, lams):
    """Dual value for each row of ``lams`` (shape ``(G, k)``) at once."""
    n, m = f.shape
    z = f[None, :, :] + (lams @ A).reshape(-1, n, m)
    return lams @ b - row_log_sum_exp(z).sum(axis=1)


def grid_oracle(scores, cs, resolution=201, zoom=41, min_cell=1e-10):
    """Maximize the dual over a grid on ``[0, min(beta_j, 20)]^k``, ``k <= 2``.

    After the full ``resolution``-point pass, the window of two cells either
    side of the best point is re-gridded with ``zoom`` points per axis,
    repeating until the cell is below ``min_cell``.
    """
    f = as_scores(scores)
    if cs.k > 2:
        raise InvalidInputError("grid oracle supports at most 2 constraints")
    if cs.k == 0:
        return normalized_exp(f), np.zeros(0)
    A = cs.dense()
    b = cs.bounds
    upper = np.minimum(cs.betas, 20.0)
    lo = np.zeros(cs.k)
    hi = upper.copy()
    points = resolution
    while True:
        axes = [np.linspace(lo[j], hi[j], points) for j in range(cs.k)]
        mesh = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)
        best = mesh[int(np.argmax(_dual_on_grid(f, A, b, mesh)))]
        cell = (hi - lo) / (points - 1)
        if cell.max() < min_cell:
            break
        lo = np.maximum(best - 2 * cell, 0.0)
        hi = np.minimum(best + 2 * cell, upper)
        points = zoom
    return biased_distribution(f, cs, best), best


@numba.njit(cache=True)
def _mirror_descent(logq, A, b, betas, iters, rho0, rho_max, stage_len):
    n, m = logq.shape
    k, nm = A.shape
    row_norm = 0.0
    for j in range(k):
        row_norm = max(row_norm, np.sum(A[j] * A[j]))
    row_norm *= k
    lq = logq.ravel().copy()
    lp = lq.copy()
    p = np.exp(lp)
    push = np.empty(nm)
    rho = rho0
    for t in range(iters):
        if t > 0 and t % stage_len == 0 and rho < rho_max:
            rho = min(2.0 * rho, rho_max)
        push[:] = 0.0
        for j in range(k):
            v = b[j]
            for c in range(nm):
                v -= A[j, c] * p[c]
            w = min(rho * max(v, 0.0), betas[j])
            if w != 0.0:
                for c in range(nm):
                    push[c] += w * A[j, c]
        eta = 1.0 / (1.0 + rho * row_norm)
        for i in range(n):
            hi = -np.inf
            for c in range(i * m, i * m + m):
                lp[c] -= eta * ((lp[c] - lq[c]) - push[c])
                hi = max(hi, lp[c])
            z = 0.0
            for c in range(i * m, i * m + m):
                p[c] = np.exp(lp[c] - hi)
                z += p[c]
            lz = hi + np.log(z)
            for c in range(i * m, i * m + m):
                lp[c] -= lz
                p[c] /= z
    return p.reshape(n, m)


def primal_descent_oracle(scores, cs, iters=100_000, rho0=1.0, rho_max=1e10):
    """Minimize ``KL(P || Q) + penalty`` by entropic mirror descent on each pixel.

    The penalty on ``v_j = b_j - A_j vec(P)`` is ``rho/2 max(0, v)^2`` for
    hard rows and, for slack rows, its slack-eliminated form
    ``min_{xi >= 0} beta xi + rho/2 max(0, v - xi)^2`` (gradient
    ``min(rho max(0, v), beta)``).  ``rho`` starts at ``rho0`` and doubles at
    evenly spaced iterations until it reaches ``rho_max``.  Only the primal
    is iterated; no dual variables are kept.
    """
    f = as_scores(scores)
    logq = f - row_log_sum_exp(f)[:, None]
    if cs.k == 0:
        return np.exp(logq)
    doublings = max(0, int(math.ceil(math.log2(rho_max / rho0))))
    stage_len = max(1, int(iters) // (doublings + 1))
    betas = np.where(np.isfinite(cs.betas), cs.betas, np.inf)
    return _mirror_descent(
        np.ascontiguousarray(logq), cs.dense(), cs.bounds, betas,
        int(iters), float(rho0), float(rho_max), stage_len,
    )


def random_instance(rng, n_max=8, m_max=4, k_max=3, hard_fraction=0.5):
    """Random strictly satisfiable instance ``(scores, ConstraintSet)``.

    Bounds are set below ``A vec(P0)`` for a random feasible ``P0``, so the
    system is feasible with margin.  Roughly ``hard_fraction`` of the rows
    are hard; the rest get slack weights in ``[1, 5]``.
    """
    from .constraints import ConstraintRow, assemble

    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(2, m_max + 1))
    k = int(rng.integers(1, k_max + 1))
    scores = rng.normal(scale=1.5, size=(n, m))
    p0 = normalized_exp(rng.normal(scale=1.5, size=(n, m)))
    rows = []
    for _ in range(k):
        if rng.random() < 0.5:
            # label-area row, as in the segmentation constraints
            label = int(rng.integers(m))
            pixels = np.arange(n)
            labels = np.full(n, label)
            values = np.full(n, rng.choice([-1.0, 1.0]))
        else:
            cnt = int(rng.integers(1, n * m + 1))
            flat = rng.choice(n * m, size=cnt, replace=False)
            pixels, labels = np.divmod(flat, m)
            values = rng.uniform(-1.0, 1.0, size=cnt)
        target = float(values @ p0[pixels, labels])
        margin = rng.uniform(0.0, 0.1) * max(1.0, float(np.abs(values).sum()))
        beta = math.inf if rng.random() < hard_fraction else float(rng.uniform(1.0, 5.0))
        rows.append(ConstraintRow(pixels, labels, values, target - margin, beta))
    return scores, assemble(rows, n, m)

"""KL projection of a softmax output onto a linear constraint polytope.

The latent distribution closest in KL to ``softmax(f)`` subject to
``A vec(P) >= b - xi`` (hinge slack with weight ``beta``) is found by
maximizing the concave dual

    L(lam) = lam^T b - sum_i logsumexp_l(f_i(l) + A_{i;l}^T lam),

over the box ``0 <= lam <= beta`` with projected gradient ascent.  The
primal solution is the biased softmax ``p_i(l) ~ exp(f_i(l) + A_{i;l}^T lam)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .distributions import InvalidInputError, as_scores, normalized_exp, row_log_sum_exp
from .loss import kl_divergence

HARD_DUAL_CAP = 1e6


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 50
    step_size: float | None = None  # None -> 1/n
    tolerance: float = 1e-6
    backtracking: bool = True
    max_step_growth: float = 4.0  # accepted steps double up to this multiple of the initial step

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise InvalidInputError("step_size must be positive")
        if not self.tolerance > 0:
            raise InvalidInputError("tolerance must be positive")
        if self.max_step_growth < 1:
            raise InvalidInputError("max_step_growth must be >= 1")


@dataclass
class DualState:
    """Final dual variables and diagnostics of one solve.

    ``max_violation`` is the worst ``b_j - A_j vec(P)`` over all rows
    (clipped at 0); ``residual`` is the projected-gradient (KKT) residual
    the stopping rule tests, which exempts rows saturated at their slack
    bound.
    """

    lam: np.ndarray
    iterations: int = 0
    dual_values: list = field(default_factory=list)
    max_violation: float = 0.0
    residual: float = 0.0
    converged: bool = True


def _check_lambda(lam, cs):
    lam = np.asarray(lam, dtype=np.float64).ravel()
    if lam.size != cs.k:
        raise InvalidInputError(f"lambda has length {lam.size}, constraint set has {cs.k} rows")
    return lam


def _check_dims(f, cs):
    if f.shape != (cs.n, cs.m):
        raise InvalidInputError(f"scores shape {f.shape} does not match constraints ({cs.n}, {cs.m})")


def biased_distribution(scores, cs, lam):
    """Closed-form minimizer ``p_i(l) ~ exp(f_i(l) + A_{i;l}^T lam)``."""
    f = as_scores(scores)
    _check_dims(f, cs)
    lam = _check_lambda(lam, cs)
    if cs.k == 0:
        return normalized_exp(f)
    return normalized_exp(f + cs.bias(lam))


def dual_value(lam, scores, cs):
    """Dual objective ``lam^T b - sum_i logsumexp(f_i + A_i^T lam)``."""
    f = as_scores(scores)
    _check_dims(f, cs)
    lam = _check_lambda(lam, cs)
    if cs.k == 0:
        return -float(np.sum(row_log_sum_exp(f)))
    return float(lam @ cs.bounds - np.sum(row_log_sum_exp(f + cs.bias(lam))))


def dual_gradient(lam, scores, cs):
    """Gradient ``b - A vec(P(lam))`` of the dual objective."""
    p = biased_distribution(scores, cs, lam)
    return cs.bounds - cs.apply(p)


def project(lam, betas):
    """Clamp each ``lam_j`` into ``[0, beta_j]``."""
    return np.clip(np.asarray(lam, dtype=np.float64), 0.0, np.asarray(betas, dtype=np.float64))


def primal_value(p, scores, cs):
    """Slack-relaxed primal objective ``KL(P || softmax(f)) + beta^T xi``.

    ``xi_j = max(0, b_j - A_j vec(P))`` for slack rows; hard rows add
    nothing here and must be checked for feasibility separately.
    """
    f = as_scores(scores)
    _check_dims(f, cs)
    value = kl_divergence(p, normalized_exp(f))
    if cs.k:
        betas = cs.betas
        soft = np.isfinite(betas)
        slack = np.maximum(cs.violations(p), 0.0)
        value += float(betas[soft] @ slack[soft])
    return value


def log_partition(scores):
    """``sum_i log Z_i``; the dual plus this constant equals the primal optimum."""
    return float(np.sum(row_log_sum_exp(as_scores(scores))))


def kkt_residual(lam, grad, betas):
    """Largest projected-gradient component for the box ``[0, beta]``."""
    if grad.size == 0:
        return 0.0
    up = np.where(lam < betas, np.maximum(grad, 0.0), 0.0)
    down = np.where(lam > 0, np.maximum(-grad, 0.0), 0.0)
    return float(np.max(np.maximum(up, down)))


def _expm1_minus_x(u):
    out = np.expm1(u) - u
    small = np.abs(u) < 1e-3
    us = u[small]
    out[small] = us * us * (0.5 + us * (1 / 6 + us * (1 / 24 + us / 120)))
    return out


def dual_increase(p, grad, dlam, AT):
    """``L(lam + dlam) - L(lam)`` without subtracting two large dual values.

    With ``P = P(lam)``, ``grad = b - A vec(P)`` and ``dz = A^T dlam`` the
    change is ``dlam^T grad - sum_i log sum_l p_i(l) exp(u_il)`` where
    ``u_i = dz_i - E_{p_i}[dz_i]``.  The inner sum equals
    ``1 + sum_l p_i(l) (expm1(u_il) - u_il)``, a sum of nonnegative terms, so
    every piece is evaluated to full relative precision.
    """
    dz = (AT @ dlam).reshape(p.shape)
    u = dz - np.sum(p * dz, axis=1, keepdims=True)
    r = np.sum(p * _expm1_minus_x(u), axis=1)
    return float(dlam @ grad - np.sum(np.log1p(np.maximum(r, 0.0))))


def solve(scores, cs, config=None, lam0=None, callback=None):
    """Project ``softmax(scores)`` onto the constraint set.

    Returns ``(P, DualState)``.  ``lam0`` warm-starts the dual variables
    (projected into the box first); ``callback(iteration, lam)`` is called
    after every accepted step.  The recorded ``dual_values`` trace is
    accumulated from exact per-step increases, so it is nondecreasing
    whenever backtracking is on.  Running out of iterations is reported via
    ``DualState.converged`` rather than raised.
    """
    config = config or SolverConfig()
    f = as_scores(scores)
    _check_dims(f, cs)
    k = cs.k
    if k == 0:
        return normalized_exp(f), DualState(lam=np.zeros(0), dual_values=[dual_value([], f, cs)])

    b = cs.bounds
    A = cs.matrix
    AT = A.T.tocsr()
    betas = np.minimum(cs.betas, HARD_DUAL_CAP)
    lam = np.zeros(k) if lam0 is None else _check_lambda(lam0, cs)
    lam = project(lam, betas)

    def biased(lam):
        return normalized_exp(f + (AT @ lam).reshape(f.shape))

    p = biased(lam)
    value = dual_value(lam, f, cs)
    init_step = config.step_size if config.step_size is not None else 1.0 / cs.n
    step = init_step
    max_step = init_step * config.max_step_growth
    trace = [value]
    iterations = 0
    grad = b - A @ p.ravel()
    resid = kkt_residual(lam, grad, betas)

    while resid > config.tolerance and iterations < config.max_iters:
        while True:
            cand = project(lam + step * grad, betas)
            gain = dual_increase(p, grad, cand - lam, AT)
            if not config.backtracking or gain >= 0:
                break
            step *= 0.5
            if step < 1e-30 * init_step:
                break
        if config.backtracking and gain < 0:
            # no ascent direction left at machine precision
            break
        lam = cand
        p = biased(lam)
        value += gain
        iterations += 1
        trace.append(value)
        if callback is not None:
            callback(iterations, lam.copy())
        if config.backtracking:
            step = min(2.0 * step, max_step)
        grad = b - A @ p.ravel()
        resid = kkt_residual(lam, grad, betas)

    state = DualState(
        lam=lam,
        iterations=iterations,
        dual_values=trace,
        max_violation=float(max(0.0, np.max(grad))),
        residual=resid,
        converged=resid <= config.tolerance,
    )
    return p, state

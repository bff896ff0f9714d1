import math

import numpy as np
import pytest

from ccnn.constraints import ConstraintRow, assemble
from ccnn.distributions import InvalidInputError, softmax
from ccnn.dual_solver import SolverConfig, dual_value, solve
from ccnn.loss import kl_divergence
from ccnn.oracle import bisection_oracle, grid_oracle, primal_descent_oracle, random_instance

EXACT = SolverConfig(max_iters=5000, tolerance=1e-9)


def column_row(n, label, bound, beta=math.inf):
    return ConstraintRow(np.arange(n), np.full(n, label), np.ones(n), bound, beta)


class TestBisection:
    def test_ln3(self):
        cs = assemble([column_row(2, 0, 1.5)], 2, 2)
        p, lam = bisection_oracle(np.zeros((2, 2)), cs)
        assert lam[0] == pytest.approx(math.log(3), abs=1e-12)
        np.testing.assert_allclose(p[:, 0], 0.75, rtol=1e-12)

    def test_inactive_row(self):
        cs = assemble([column_row(2, 0, 0.5)], 2, 2)
        p, lam = bisection_oracle(np.zeros((2, 2)), cs)
        assert lam[0] == 0.0
        np.testing.assert_array_equal(p, softmax(np.zeros((2, 2))))

    def test_saturated_slack_row(self):
        cs = assemble([column_row(1, 0, 2.0, beta=2.0)], 1, 2)
        _, lam = bisection_oracle(np.zeros((1, 2)), cs)
        assert lam[0] == 2.0

    def test_needs_one_row(self):
        cs = assemble([column_row(1, 0, 0.1), column_row(1, 1, 0.1)], 1, 2)
        with pytest.raises(InvalidInputError):
            bisection_oracle(np.zeros((1, 2)), cs)


class TestGrid:
    def test_empty_set(self):
        f = np.array([[0.2, 1.0, -0.5]])
        p, lam = grid_oracle(f, assemble([], 1, 3))
        np.testing.assert_array_equal(p, softmax(f))
        assert lam.size == 0

    def test_matches_bisection(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            f, cs = random_instance(rng, k_max=1)
            pg, _ = grid_oracle(f, cs)
            pb, _ = bisection_oracle(f, cs)
            assert kl_divergence(pb, pg) <= 1e-9

    def test_solver_at_least_matches_grid(self):
        rng = np.random.default_rng(1)
        seen = 0
        while seen < 20:
            f, cs = random_instance(rng)
            if cs.k != 2:
                continue
            seen += 1
            _, lam_grid = grid_oracle(f, cs)
            _, state = solve(f, cs, EXACT)
            assert dual_value(lam_grid, f, cs) <= dual_value(state.lam, f, cs) + 1e-4

    def test_rejects_three_rows(self):
        rows = [column_row(2, l, 0.1) for l in range(3)]
        with pytest.raises(InvalidInputError):
            grid_oracle(np.zeros((2, 3)), assemble(rows, 2, 3))


class TestPrimalDescent:
    def test_empty_set(self):
        f = np.array([[1.0, 0.0], [0.0, 3.0]])
        np.testing.assert_allclose(primal_descent_oracle(f, assemble([], 2, 2)), softmax(f), rtol=1e-14)

    def test_matches_bisection(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            f, cs = random_instance(rng, k_max=1)
            pb, _ = bisection_oracle(f, cs)
            assert kl_divergence(pb, primal_descent_oracle(f, cs)) <= 1e-5

    def test_matches_solver_and_satisfies_unsaturated_rows(self):
        rng = np.random.default_rng(3)
        for _ in range(15):
            f, cs = random_instance(rng)
            p, state = solve(f, cs, EXACT)
            pp = primal_descent_oracle(f, cs)
            assert kl_divergence(p, pp) <= 1e-5
            # rows whose slack weight is saturated may legitimately stay violated
            open_rows = state.lam < cs.betas
            assert np.all(cs.violations(pp)[open_rows] <= 1e-4)


def test_random_instances_are_seeded_and_bounded():
    a = random_instance(np.random.default_rng(7))
    b = random_instance(np.random.default_rng(7))
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1].to_list() == b[1].to_list()
    rng = np.random.default_rng(8)
    for _ in range(50):
        f, cs = random_instance(rng)
        assert f.shape[0] <= 8 and 2 <= f.shape[1] <= 4 and 1 <= cs.k <= 3

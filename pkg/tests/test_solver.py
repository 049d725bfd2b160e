"""Box solver, closed-form deviation-plus-price minimizer, and the
prefix-coupled exact piecewise-linear solver, all against grid oracles."""

import numpy as np
import pytest

from flowtarget.core import DeviationCost
from flowtarget.solver import chain_prefix_argmin, min_dev_plus_price, solve_box_convex

from helpers import grid_minimize, random_composite


class TestSolveBoxConvex:
    def test_absolute_plus_small_price_returns_target(self):
        g = DeviationCost.absolute(1.0, 0.6)
        mu = 0.5
        f = lambda x: g.evaluate(float(x[0])) + mu * float(x[0])
        sub = lambda x: np.array([g.subgradient(float(x[0])) + mu])
        grid = np.linspace(0.0, 1.0, 10001)
        oracle = grid[np.argmin(np.abs(grid - 0.6) + mu * grid)]
        res = solve_box_convex(f, sub, np.array([0.1]))
        assert abs(res.x[0] - oracle) <= 1e-4
        assert abs(res.x[0] - 0.6) <= 1e-4

    def test_large_price_drives_to_zero(self):
        g = DeviationCost.absolute(1.0, 0.6)
        f = lambda x: g.evaluate(float(x[0])) + 2.0 * float(x[0])
        sub = lambda x: np.array([g.subgradient(float(x[0])) + 2.0])
        res = solve_box_convex(f, sub, np.array([0.9]))
        assert abs(res.x[0] - 0.0) <= 1e-4

    def test_linear_positive_slope_hits_lower_boundary(self):
        f = lambda x: 3.0 * float(x.sum())
        sub = lambda x: np.full_like(x, 3.0)
        res = solve_box_convex(f, sub, np.array([0.7, 0.2]))
        assert np.all(res.x <= 1e-6)

    def test_separable_quadratics_reach_projected_minimum(self):
        # min (x0 - 0.3)^2 + 2 (x1 + 0.25)^2 over the unit box
        f = lambda x: (x[0] - 0.3) ** 2 + 2.0 * (x[1] + 0.25) ** 2
        sub = lambda x: np.array([2.0 * (x[0] - 0.3), 4.0 * (x[1] + 0.25)])
        res = solve_box_convex(f, sub, np.array([0.9, 0.9]), budget=8000, rounds=14)
        np.testing.assert_allclose(res.x, [0.3, 0.0], atol=1e-6)

    def test_flat_objective_keeps_warm_start(self):
        f = lambda x: 0.0
        sub = lambda x: np.zeros_like(x)
        res = solve_box_convex(f, sub, np.array([0.4, 0.8]))
        assert res.converged
        np.testing.assert_allclose(res.x, [0.4, 0.8])

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_random_composites_match_grid_oracle(self, d):
        for seed in range(6):
            f, sub, f_batch = random_composite(1000 * d + seed, d)
            _, ref = grid_minimize(f_batch, d)
            res = solve_box_convex(f, sub, np.full(d, 0.5), budget=3000)
            assert res.objective <= ref + 1e-3


class TestMinDevPlusPrice:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_grid(self, seed):
        rng = np.random.default_rng(seed)
        fam = ["zero", "absolute", "under_over", "squared"][seed % 4]
        target = float(rng.uniform(-0.5, 1.5))  # may sit outside the box
        if fam == "zero":
            g = DeviationCost.zero()
        elif fam == "absolute":
            g = DeviationCost.absolute(float(rng.uniform(0.1, 3.0)), target)
        elif fam == "under_over":
            g = DeviationCost.under_over(float(rng.uniform(0, 3)), float(rng.uniform(0, 3)), target)
        else:
            g = DeviationCost.squared(float(rng.uniform(0.1, 3.0)), target)
        mu = float(rng.uniform(-2.0, 2.0))
        a = min_dev_plus_price(np.array([[g.family == "squared"]]),
                               np.array([[g.target]]), np.array([[g.delta_plus]]),
                               np.array([[g.delta_minus]]), np.array([[mu]]))[0, 0]
        grid = np.linspace(0, 1, 100001)
        vals = np.array([g.evaluate(x, check_domain=False) for x in grid]) + mu * grid
        assert g.evaluate(a, check_domain=False) + mu * a <= vals.min() + 1e-9

    def test_flat_returns_zero(self):
        a = min_dev_plus_price(np.zeros((1, 2), dtype=bool), np.zeros((1, 2)),
                               np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2)))
        np.testing.assert_array_equal(a, 0.0)


def aux_objective_batched(tau, d_plus, d_minus, nu):
    """Batched version of the prefix-coupled objective for grid checking:
    the linear term prices the consumption prefixes, as in the contract."""
    def f(points):
        s = np.cumsum(points, axis=1)
        vals = s @ nu
        for q in range(len(tau)):
            gap = s[:, q] - tau[q]
            vals = vals + d_plus[q] * np.maximum(gap, 0.0) + d_minus[q] * np.maximum(-gap, 0.0)
        return vals
    return f


class TestChainPrefixArgmin:
    def test_single_row_examples(self):
        # absolute penalty toward 0.6 with a small price keeps the target;
        # a price above the kink slope drives consumption to zero
        a = chain_prefix_argmin(np.array([0.6]), np.array([1.0]), np.array([1.0]), np.array([0.5]))
        assert a[0] == pytest.approx(0.6, abs=1e-12)
        a = chain_prefix_argmin(np.array([0.6]), np.array([1.0]), np.array([1.0]), np.array([2.0]))
        assert a[0] == pytest.approx(0.0, abs=1e-12)

    def test_flat_objective_returns_zeros(self):
        a = chain_prefix_argmin(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))
        np.testing.assert_array_equal(a, 0.0)

    @pytest.mark.parametrize("R", [1, 2, 3])
    def test_matches_grid_oracle(self, R):
        for seed in range(25):
            rng = np.random.default_rng(seed + 31 * R)
            tau = rng.uniform(-0.5, R + 0.5, size=R)
            dp = np.where(rng.random(R) < 0.15, 0.0, rng.uniform(0.1, 3.0, R))
            dm = np.where(rng.random(R) < 0.15, 0.0, rng.uniform(0.1, 3.0, R))
            nu = rng.uniform(-1.5, 1.5, size=R)
            a = chain_prefix_argmin(tau, dp, dm, nu)
            assert np.all(a >= -1e-12) and np.all(a <= 1 + 1e-12)
            f = aux_objective_batched(tau, dp, dm, nu)
            _, ref = grid_minimize(f, R, levels=7)
            assert f(a[None, :])[0] <= ref + 1e-9

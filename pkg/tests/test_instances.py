"""Generators, the Gumbel/aggregate-count model and estimator, and the
nonstationary-to-stationary reductions."""

import numpy as np
import pytest

from flowtarget import (
    AggregateObservation,
    GumbelCostModel,
    Instance,
    NonstatProfile,
    SyntheticParams,
    estimate_gumbel_mle,
    generate_synthetic,
    ideal_quantities,
    nonstationary_transform,
    replay_decisions,
    sample_arrivals,
    sample_gumbel_arrivals,
    total_cost,
)
from flowtarget.instances import (
    generate_observations,
    mle_gradient,
    nonstationary_total_cost,
    random_instance,
    softmin_rates,
    softmin_weights,
)
from flowtarget.rng import rng_stream


class TestSyntheticGenerator:
    def test_deterministic_given_seed(self, tmp_path):
        params = SyntheticParams(gamma=2.0, delta=1.0, seed=11)
        a = generate_synthetic(params)
        b = generate_synthetic(params)
        a.save(str(tmp_path / "a.json"))
        b.save(str(tmp_path / "b.json"))
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_no_impulse_means_flat_targets(self):
        inst = generate_synthetic(SyntheticParams(gamma=1.0, seed=3))
        assert np.allclose(inst.targets, inst.targets[0, 0])

    def test_impulse_scales_middle_epoch(self):
        inst = generate_synthetic(SyntheticParams(gamma=2.0, seed=3))
        assert np.allclose(inst.targets[1], 2.0 * inst.targets[0])
        assert np.allclose(inst.targets[2], inst.targets[0])

    def test_cost_ranges_and_mean(self):
        diag = []
        off = []
        for rep in range(10_000 // 3 + 1):
            inst = generate_synthetic(SyntheticParams(seed=77), stream_index=rep)
            for j in range(inst.n):
                diag.append(inst.costs[j, j % inst.m])
                off.extend(inst.costs[j, i] for i in range(inst.m) if i != j % inst.m)
        diag = np.asarray(diag)
        off = np.asarray(off)
        assert np.all((diag >= -1.0) & (diag <= -2.0 / 3.0))
        assert np.all((off >= -2.0 / 3.0) & (off <= 0.0))
        assert diag.mean() == pytest.approx(-5.0 / 6.0, abs=0.01)

    def test_target_clipping_warns(self):
        with pytest.warns(UserWarning, match="clipping"):
            inst = generate_synthetic(SyntheticParams(gamma=2.5, m=1, n=1, seed=1,
                                                      base_target_range=(0.59, 0.6)))
        assert inst.targets.max() == 1.0

    def test_probabilities_normalized(self):
        inst = generate_synthetic(SyntheticParams(seed=5))
        assert inst.probs.sum() == pytest.approx(1.0, abs=1e-12)


class TestArrivalSampling:
    def test_degenerate_distribution(self):
        inst = random_instance(2, max_n=3)
        probs = np.zeros(inst.n)
        probs[0] = 1.0
        inst = Instance(costs=inst.costs, feasible=inst.feasible, probs=probs,
                        epochs=inst.K, horizon=inst.T, targets=inst.targets,
                        dev_costs=inst.dev_costs)
        omega = sample_arrivals(inst, 9)
        assert np.all(omega.types == 0)

    def test_empirical_frequencies(self):
        params = SyntheticParams(T=9999, seed=21)
        inst = generate_synthetic(params)
        omega = sample_arrivals(inst, 21)
        counts = omega.type_counts(inst)
        for j in range(inst.n):
            se = np.sqrt(inst.probs[j] * (1 - inst.probs[j]) * inst.T)
            assert abs(counts[j] - inst.probs[j] * inst.T) <= 3.0 * se + 1.0

    def test_gumbel_argmin_matches_softmin(self):
        locs = np.array([[-0.33, 1.27, 0.21]])
        model = GumbelCostModel(locations=locs, rate=4.0)
        omega = sample_gumbel_arrivals(model, 100_000, seed=13)
        cv = omega.cost_vectors
        best = cv.argmin(axis=1)
        assigned = cv[np.arange(len(cv)), best] <= 0.0
        w = softmin_weights(locs)[0]
        for i in range(3):
            emp = np.mean(assigned & (best == i))
            assert emp == pytest.approx(w[i], abs=0.02)
        assert np.mean(~assigned) == pytest.approx(1.0 - w.sum(), abs=0.02)


class TestIdealQuantities:
    def test_all_positive_costs_count_nothing(self):
        cv = np.full((10, 3), 0.5)
        obs = ideal_quantities(cv, [4, 6])
        assert obs.counts.sum() == 0
        np.testing.assert_array_equal(obs.arrivals, [4, 6])

    def test_dominant_resource_takes_all(self):
        cv = np.tile([0.4, -1.0, 0.2], (12, 1))
        obs = ideal_quantities(cv, [5, 7])
        np.testing.assert_array_equal(obs.counts[:, 1], [5, 7])
        assert obs.counts[:, [0, 2]].sum() == 0

    def test_matches_enumeration(self):
        rng = np.random.default_rng(4)
        cv = rng.normal(size=(30, 2))
        sizes = [10, 12, 8]
        obs = ideal_quantities(cv, sizes)
        manual = np.zeros((3, 2), dtype=int)
        pos = 0
        for t, size in enumerate(sizes):
            for _ in range(size):
                row = cv[pos]
                i = int(np.argmin(row))
                if row[i] <= 0:
                    manual[t, i] += 1
                pos += 1
        np.testing.assert_array_equal(obs.counts, manual)

    def test_csv_round_trip(self, tmp_path):
        model = GumbelCostModel(locations=np.array([[0.1, -0.4]]), rate=3.0)
        obs = generate_observations(model, 40, seed=3)
        path = str(tmp_path / "obs.csv")
        obs.to_csv(path)
        back = AggregateObservation.from_csv(path)
        np.testing.assert_array_equal(back.counts, obs.counts)
        np.testing.assert_array_equal(back.arrivals, obs.arrivals)


class TestMle:
    def test_soft_min_rates_bounded_by_rate(self):
        model = GumbelCostModel(locations=np.array([[-2.0, 0.5], [1.0, -1.0]]),
                                probs=np.array([0.6, 0.4]), rate=5.0)
        rates = softmin_rates(model)
        assert rates.sum() <= model.rate
        assert np.all(rates > 0)

    def test_symmetric_exact_rates_recover_equal_locations(self):
        counts = np.ones((64, 3), dtype=int)
        arrivals = np.full(64, 4)
        obs = AggregateObservation(counts, arrivals)
        res = estimate_gumbel_mle(obs, restarts=4, iters=4000)
        assert np.ptp(res.locations) <= 0.05
        w = softmin_weights(res.locations)[0]
        np.testing.assert_allclose(4.0 * w, 1.0, atol=0.02)

    def test_gradient_matches_finite_differences(self):
        rng = rng_stream(7, "restarts", 0)
        for _ in range(5):
            n, m = 2, 3
            p = rng.dirichlet(np.ones(n))
            c = rng.uniform(-2, 2, size=(n, m))
            rate = 4.0
            mean_counts = rng.uniform(0.05, 1.5, size=m)
            _, gp, gc = mle_gradient(p, c, rate, mean_counts)
            h = 1e-6
            for j in range(n):
                pp = p.copy(); pp[j] += h
                pm = p.copy(); pm[j] -= h
                fd = (mle_gradient(pp, c, rate, mean_counts)[0]
                      - mle_gradient(pm, c, rate, mean_counts)[0]) / (2 * h)
                assert gp[j] == pytest.approx(fd, abs=1e-5)
                for i in range(m):
                    cp = c.copy(); cp[j, i] += h
                    cm = c.copy(); cm[j, i] -= h
                    fd = (mle_gradient(p, cp, rate, mean_counts)[0]
                          - mle_gradient(p, cm, rate, mean_counts)[0]) / (2 * h)
                    assert gc[j, i] == pytest.approx(fd, abs=1e-5)

    def test_quick_recovery_from_sampled_counts(self):
        locs = np.array([[-0.33, 1.27, 0.21]])
        model = GumbelCostModel(locations=locs, rate=4.0)
        obs = generate_observations(model, 3000, seed=42)
        res = estimate_gumbel_mle(obs, restarts=4, iters=4000, seed=1)
        np.testing.assert_allclose(res.locations[0], locs[0], atol=0.1)
        assert not res.degenerate

    def test_degenerate_observations_flagged(self):
        obs = AggregateObservation(np.zeros((5, 2), dtype=int), np.full(5, 3))
        res = estimate_gumbel_mle(obs, restarts=2, iters=10)
        assert res.degenerate
        assert np.all(res.locations == 50.0)

    def test_result_beats_random_start(self):
        model = GumbelCostModel(locations=np.array([[0.5, -0.5]]), rate=3.0)
        obs = generate_observations(model, 500, seed=8)
        res = estimate_gumbel_mle(obs, restarts=3, iters=2000, seed=2)
        from flowtarget.instances import _full_log_likelihood
        rng = rng_stream(99, "restarts", 0)
        random_ll = _full_log_likelihood(np.ones(1), rng.uniform(-3, 3, (1, 2)),
                                         float(obs.arrivals.mean()), obs)
        assert res.log_likelihood >= random_ll


def random_profile(rng, K, T):
    """Random positive integer arrival counts per epoch summing to T."""
    while True:
        cuts = np.sort(rng.choice(np.arange(1, T), size=K - 1, replace=False)) if K > 1 else np.array([], dtype=int)
        counts = np.diff(np.concatenate([[0], cuts, [T]]))
        if np.all(counts > 0):
            return NonstatProfile(counts / T)


def random_feasible_decisions(rng, inst, omega):
    dec = np.empty(inst.T, dtype=int)
    for t in range(inst.T):
        opts = [-1] + list(np.flatnonzero(inst.feasible[int(omega.types[t])]))
        dec[t] = opts[rng.integers(len(opts))]
    return dec


class TestNonstationary:
    def test_profile_validation(self):
        with pytest.raises(ValueError, match="sum to 1"):
            NonstatProfile(np.array([0.5, 0.6]))
        with pytest.raises(ValueError, match="integral"):
            NonstatProfile(np.array([1 / 3, 2 / 3])).counts(10)
        with pytest.raises(ValueError, match="per-arrival or per-period"):
            NonstatProfile(np.array([0.5, 0.5]), mode="sideways")

    def test_quarter_half_quarter_example(self):
        inst = random_instance(1, max_m=2, max_n=2, max_K=1, max_T=1)
        targets = np.array([[0.2] * inst.m, [0.5] * inst.m, [0.8] * inst.m])
        base = Instance(costs=inst.costs, feasible=inst.feasible, probs=inst.probs,
                        epochs=3, horizon=96, targets=targets,
                        dev_costs=tuple(
                            tuple(__import__("flowtarget").DeviationCost.absolute(1.0, float(t))
                                  for t in row) for row in targets))
        profile = NonstatProfile(np.array([0.25, 0.5, 0.25]))
        new = nonstationary_transform(base, profile)
        assert new.K == 4
        # original epochs land at new epochs 1, 3, 4 (1-based); epoch 2 is free
        assert new.dev_costs[0] == base.dev_costs[0]
        assert all(g.family == "zero" for g in new.dev_costs[1])
        assert new.dev_costs[2] == base.dev_costs[1]
        assert new.dev_costs[3] == base.dev_costs[2]

    def test_uniform_profile_is_identity(self):
        inst = random_instance(8, max_K=4, max_T=80)
        profile = NonstatProfile(np.full(inst.K, 1.0 / inst.K))
        new = nonstationary_transform(inst, profile)
        assert new.K == inst.K
        assert new.dev_costs == inst.dev_costs
        np.testing.assert_allclose(new.targets, inst.targets)

    def test_gcd_floor_rejection(self):
        from flowtarget import uniform_dev_costs
        targets = np.full((2, 1), 0.4)
        base = Instance(costs=[[0.1]], feasible=[[True]], probs=np.array([1.0]),
                        epochs=2, horizon=300, targets=targets,
                        dev_costs=uniform_dev_costs(targets, "absolute", 1.0))
        with pytest.raises(ValueError, match="cap"):
            nonstationary_transform(base, NonstatProfile(np.array([1 / 300, 299 / 300])))

    @pytest.mark.parametrize("seed", range(10))
    def test_per_arrival_cost_equality(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_instance(seed + 900, max_m=3, max_n=3, max_K=4, max_T=120,
                               allow_squared=True)
        omega = sample_arrivals(inst, seed)
        profile = random_profile(rng, inst.K, inst.T)
        dec = random_feasible_decisions(rng, inst, omega)
        new = nonstationary_transform(inst, profile)
        state, asg = replay_decisions(new, omega, dec)
        _, _, v_new = total_cost(new, state, None if not new.continuous else asg)
        v_orig = nonstationary_total_cost(inst, profile, omega, dec)
        scale = 1.0 + abs(v_orig)
        assert abs(v_new - v_orig) <= 1e-9 * scale

    @pytest.mark.parametrize("seed", range(10))
    def test_per_period_cost_equality(self, seed):
        rng = np.random.default_rng(seed + 1)
        inst = random_instance(seed + 950, max_m=2, max_n=3, max_K=4, max_T=120,
                               allow_squared=True)
        omega = sample_arrivals(inst, seed)
        counts = random_profile(rng, inst.K, inst.T)
        profile = NonstatProfile(counts.fractions, mode="per-period")
        dec = random_feasible_decisions(rng, inst, omega)
        new = nonstationary_transform(inst, profile)
        state, asg = replay_decisions(new, omega, dec)
        _, _, v_new = total_cost(new, state)
        v_orig = nonstationary_total_cost(inst, profile, omega, dec)
        scale = 1.0 + abs(v_orig)
        assert abs(v_new - v_orig) <= 1e-9 * scale

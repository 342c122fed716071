"""Bit allocation: QoE reference, closed-form roots vs a numeric oracle,
bisection behavior, and the uniform baseline."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from fvsim.allocator import (
    Allocation,
    BudgetSchedule,
    QoeParams,
    RateBounds,
    _solve_rates_at,
    allocate,
    qoe_total,
    read_allocation_csv,
    solve_constant_rate,
    solve_switching_rate,
    target_bits,
    uniform_allocate,
    write_allocation_csv,
)
from fvsim.errors import ConfigError, NonFiniteValue, ShapeError

WIDE = RateBounds(r_min=0.0, r_max=1e9, rhat_min=0.0, rhat_max=1e9)


def qoe_reference(r, rh, r_prev, p, p_hat, params):
    """Scalar-loop restatement of the objective."""
    n = len(r)
    total = 0.0
    for i in range(n):
        total += p[i] * math.log(1.0 + r[i] / params.eta)
        total += p_hat[i] * math.log(1.0 + rh[i] / params.eta_hat)
    for i in range(1, n):
        total -= params.mu1 * params.mu3 * p_hat[i] * (rh[i] - rh[i - 1]) ** 2
        total -= params.mu1 * p_hat[i] * (rh[i] / params.eta_hat - r[i - 1] / params.eta) ** 2
    for i in range(n):
        total -= params.mu2 * p[i] * (r[i] - r_prev[i]) ** 2
    return total


def constant_residual(R, p, r_prev, lam, params):
    return p / (params.eta + R) - 2.0 * params.mu2 * p * (R - r_prev) - lam


def switching_residual(R, p_hat, rhat_prev, r_prev, lam, params):
    out = p_hat / (params.eta_hat + R) - lam
    if rhat_prev is not None:
        out -= 2.0 * params.mu1 * params.mu3 * p_hat * (R - rhat_prev)
        out -= (2.0 * params.mu1 * p_hat / params.eta_hat) * (
            R / params.eta_hat - r_prev / params.eta
        )
    return out


class TestQoe:
    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(0)
        params = QoeParams(mu1=0.8, mu2=0.1, mu3=1.3, eta=1.5, eta_hat=3.0)
        for _ in range(50):
            n = int(rng.integers(1, 9))
            r = rng.uniform(0.1, 5.0, n)
            rh = rng.uniform(0.1, 5.0, n)
            prev = rng.uniform(0.1, 5.0, n)
            p = rng.uniform(0.0, 1.0, n)
            p_hat = rng.uniform(0.0, 1.0, n)
            got = qoe_total(r, rh, prev, p, p_hat, params)
            want = qoe_reference(r, rh, prev, p, p_hat, params)
            assert got == pytest.approx(want, rel=1e-12)

    def test_first_chunk_has_no_temporal_term(self):
        params = QoeParams()
        r = np.array([2.0, 3.0])
        rh = np.array([1.0, 1.0])
        p = np.array([0.3, 0.2])
        p_hat = np.array([0.3, 0.2])
        with_prev = qoe_total(r, rh, r, p, p_hat, params)
        far_prev = qoe_total(r, rh, r + 5.0, p, p_hat, params)
        assert with_prev > far_prev

    def test_guards(self):
        params = QoeParams()
        with pytest.raises(ShapeError):
            qoe_total(np.ones(2), np.ones(3), np.ones(2), np.ones(2), np.ones(2), params)
        with pytest.raises(NonFiniteValue):
            qoe_total(
                np.array([np.nan, 1.0]), np.ones(2), np.ones(2), np.ones(2),
                np.ones(2), params,
            )


class TestClosedForms:
    def test_constant_rate_hand_example(self):
        # p/(eta+R) - 2 mu2 p (R - 0) - lam = 0 at R = 1:
        # 1/2 - 1/8 = 0.375 with eta = 1, mu2 = 1/16
        params = QoeParams()
        got = solve_constant_rate(1.0, 0.0, 0.375, params, WIDE)
        assert got == pytest.approx(1.0, abs=1e-12)

    def test_first_view_switching_hand_example(self):
        # no left neighbor: p_hat/(eta_hat + R) = lam -> R = 1/0.1 - 4 = 6
        params = QoeParams()
        got = solve_switching_rate(1.0, None, None, 0.1, params, WIDE)
        assert got == pytest.approx(6.0, abs=1e-12)

    def test_zero_popularity_pins_minimum(self):
        params = QoeParams()
        box = RateBounds(0.5, 4.0, 0.25, 4.0)
        assert solve_constant_rate(0.0, 1.0, 0.1, params, box) == 0.5
        assert solve_switching_rate(0.0, 1.0, 1.0, 0.1, params, box) == 0.25

    def test_large_lambda_clamps_low(self):
        params = QoeParams()
        box = RateBounds(0.5, 4.0, 0.25, 4.0)
        assert solve_constant_rate(0.2, 1.0, 50.0, params, box) == 0.5
        assert solve_switching_rate(0.2, 1.0, 1.0, 50.0, params, box) == 0.25

    def test_constant_root_matches_brentq(self):
        rng = np.random.default_rng(1)
        params = QoeParams(mu2=0.21, eta=1.7)
        for _ in range(300):
            p = rng.uniform(0.01, 1.0)
            r_prev = rng.uniform(0.0, 8.0)
            lam = rng.uniform(0.0, 2.0)
            got = solve_constant_rate(p, r_prev, lam, params, WIDE)
            want = brentq(
                constant_residual, -params.eta + 1e-12, 1e8,
                args=(p, r_prev, lam, params), xtol=1e-12,
            )
            want = min(max(want, WIDE.r_min), WIDE.r_max)
            assert got == pytest.approx(want, abs=1e-8)

    def test_switching_root_matches_brentq(self):
        rng = np.random.default_rng(2)
        params = QoeParams(mu1=0.7, mu3=1.4, eta_hat=3.3)
        for _ in range(300):
            p_hat = rng.uniform(0.01, 1.0)
            rhat_prev = rng.uniform(0.0, 8.0)
            r_prev = rng.uniform(0.0, 8.0)
            lam = rng.uniform(0.0, 2.0)
            got = solve_switching_rate(p_hat, rhat_prev, r_prev, lam, params, WIDE)
            want = brentq(
                switching_residual, -params.eta_hat + 1e-12, 1e8,
                args=(p_hat, rhat_prev, r_prev, lam, params), xtol=1e-12,
            )
            want = min(max(want, WIDE.rhat_min), WIDE.rhat_max)
            assert got == pytest.approx(want, abs=1e-8)

    def test_more_popular_view_gets_more(self):
        params = QoeParams()
        box = RateBounds(0.01, 100.0, 0.01, 100.0)
        hi = solve_constant_rate(0.9, 1.0, 0.05, params, box)
        lo = solve_constant_rate(0.1, 1.0, 0.05, params, box)
        assert hi > lo


class TestAllocate:
    def params_bounds(self, n, r_avg=20.0):
        return QoeParams(), RateBounds.default_for(r_avg, n)

    def test_stationarity_of_interior_coordinates(self):
        # interior rates must be stationary for the joint objective, which
        # adds each rate's feedback into its right neighbor's penalties on
        # top of the per-view solve
        params, bounds = self.params_bounds(5)
        rng = np.random.default_rng(3)
        w = rng.dirichlet(np.ones(10))
        p, p_hat = w[:5], w[5:]
        prev = rng.uniform(bounds.r_min, bounds.r_max, 5)
        alloc = allocate(0, 18.0, p, p_hat, prev, params, bounds)
        assert not alloc.flags
        r, rh = alloc.constant, alloc.switching
        e, eh = params.eta, params.eta_hat
        for i in range(5):
            if bounds.r_min < r[i] < bounds.r_max:
                res = constant_residual(r[i], p[i], prev[i], alloc.lam, params)
                if i + 1 < 5:
                    res += (2.0 * params.mu1 * p_hat[i + 1] / e) * (
                        rh[i + 1] / eh - r[i] / e
                    )
                assert abs(res) < 1e-8, i
            if bounds.rhat_min < rh[i] < bounds.rhat_max:
                res = switching_residual(
                    rh[i], p_hat[i],
                    rh[i - 1] if i else None, r[i - 1] if i else None,
                    alloc.lam, params,
                )
                if i + 1 < 5:
                    res += 2.0 * params.mu1 * params.mu3 * p_hat[i + 1] * (
                        rh[i + 1] - rh[i]
                    )
                assert abs(res) < 1e-8, i

    def test_budget_fidelity_randomized(self):
        rng = np.random.default_rng(4)
        params = QoeParams()
        checked = 0
        for _ in range(200):
            n = int(rng.integers(2, 12))
            bounds = RateBounds.default_for(rng.uniform(5.0, 50.0), n)
            w = rng.dirichlet(np.ones(2 * n)) * rng.uniform(0.5, 1.5)
            p, p_hat = w[:n], w[n:]
            prev = rng.uniform(bounds.r_min, bounds.r_max, n)
            r0, rh0 = _solve_rates_at(params.lambda_min, p, p_hat, prev, params, bounds)
            top = float(r0.sum() + rh0.sum())
            floor = n * (bounds.r_min + bounds.rhat_min)
            if top <= floor * 1.1:
                continue
            budget = rng.uniform(floor * 1.02, top * 0.98)
            alloc = allocate(0, budget, p, p_hat, prev, params, bounds)
            assert not alloc.flags
            assert abs(alloc.total - budget) <= params.epsilon * budget
            assert np.all(alloc.constant >= bounds.r_min - 1e-12)
            assert np.all(alloc.constant <= bounds.r_max + 1e-12)
            assert np.all(alloc.switching >= bounds.rhat_min - 1e-12)
            assert np.all(alloc.switching <= bounds.rhat_max + 1e-12)
            checked += 1
        assert checked > 150

    def test_total_monotone_in_lambda(self):
        params, bounds = self.params_bounds(4)
        rng = np.random.default_rng(5)
        w = rng.dirichlet(np.ones(8))
        prev = rng.uniform(bounds.r_min, bounds.r_max, 4)
        totals = []
        for lam in np.linspace(0.0, 5.0, 40):
            r, rh = _solve_rates_at(lam, w[:4], w[4:], prev, params, bounds)
            totals.append(r.sum() + rh.sum())
        diffs = np.diff(totals)
        assert np.all(diffs <= 1e-9)

    def test_infeasible_budget_pins_minimums(self):
        params = QoeParams()
        bounds = RateBounds(1.0, 4.0, 1.0, 4.0)
        alloc = allocate(0, 3.0, np.ones(4) / 8, np.ones(4) / 8, np.ones(4), params, bounds)
        assert alloc.flags == ("Infeasible",)
        np.testing.assert_array_equal(alloc.constant, 1.0)
        np.testing.assert_array_equal(alloc.switching, 1.0)

    def test_bracket_exhausted_on_unreachable_budget(self):
        # every rate tops out well below this budget even at lambda = 0, so
        # no multiplier can reach it and the loop runs dry
        params = QoeParams()
        bounds = RateBounds(0.0, 1e7, 0.0, 10.0)
        p = np.array([0.5, 0.3])
        p_hat = np.array([0.1, 0.1])
        alloc = allocate(0, 1000.0, p, p_hat, np.ones(2), params, bounds)
        assert "BracketExhausted" in alloc.flags
        assert alloc.iterations == params.max_iterations
        assert alloc.total < 1000.0 * (1.0 - params.epsilon)

    def test_skewed_popularity_orders_constant_rates(self):
        params, bounds = self.params_bounds(2)
        alloc = allocate(
            0, 10.0, np.array([0.45, 0.05]), np.array([0.45, 0.05]),
            np.full(2, 2.5), params, bounds,
        )
        assert alloc.constant[0] > alloc.constant[1]

    def test_skewed_popularity_orders_switching_without_coupling(self):
        # the smoothness coupling deliberately drags a quiet view toward its
        # busy neighbor, so the plain ordering needs mu1 = 0
        params = QoeParams(mu1=0.0)
        bounds = RateBounds.default_for(20.0, 2)
        alloc = allocate(
            0, 10.0, np.array([0.45, 0.05]), np.array([0.45, 0.05]),
            np.full(2, 2.5), params, bounds,
        )
        assert alloc.switching[0] > alloc.switching[1]

    def test_symmetric_setup_gives_symmetric_rates(self):
        # with the couplings off and equal offsets, every representation
        # faces the same stationarity equation
        params = QoeParams(mu1=0.0, mu2=0.0, eta=2.0, eta_hat=2.0)
        bounds = RateBounds(0.01, 100.0, 0.01, 100.0)
        n = 4
        p = np.full(n, 1.0 / (2 * n))
        alloc = allocate(0, 12.0, p, p, np.ones(n), params, bounds)
        assert not alloc.flags
        np.testing.assert_allclose(alloc.constant, alloc.constant[0])
        np.testing.assert_allclose(alloc.switching, alloc.constant[0], rtol=1e-9)

    def test_beats_uniform_on_skewed_traffic(self):
        params, bounds = self.params_bounds(4)
        p = np.array([0.40, 0.04, 0.03, 0.03])
        p_hat = np.array([0.40, 0.04, 0.03, 0.03])
        prev = np.full(4, 10.0 / 8)
        budget = 10.0
        smart = allocate(0, budget, p, p_hat, prev, params, bounds)
        flat = uniform_allocate(0, budget, 4, bounds)
        assert not smart.flags and not flat.flags
        q_smart = qoe_total(smart.constant, smart.switching, prev, p, p_hat, params)
        q_flat = qoe_total(flat.constant, flat.switching, prev, p, p_hat, params)
        assert q_smart > q_flat

    def test_input_guards(self):
        params, bounds = self.params_bounds(2)
        with pytest.raises(ShapeError):
            allocate(0, 5.0, np.ones(2), np.ones(3), np.ones(2), params, bounds)
        with pytest.raises(ConfigError):
            allocate(0, 0.0, np.ones(2), np.ones(2), np.ones(2), params, bounds)


class TestUniform:
    def test_equal_split_inside_box(self):
        bounds = RateBounds(1.0, 100.0, 1.0, 100.0)
        alloc = uniform_allocate(0, 200.0, 2, bounds)
        np.testing.assert_allclose(alloc.constant, 50.0)
        np.testing.assert_allclose(alloc.switching, 50.0)
        assert alloc.total == pytest.approx(200.0)

    def test_disjoint_boxes_water_level(self):
        # the equal split of 3.5 over two reps is 1.75, outside both boxes:
        # the constant rep caps at 1.0 and switching absorbs the rest
        bounds = RateBounds(0.5, 1.0, 2.0, 2.5)
        alloc = uniform_allocate(0, 3.5, 1, bounds)
        assert alloc.constant[0] == pytest.approx(1.0)
        assert alloc.switching[0] == pytest.approx(2.5)

    def test_partial_clamp_total_exact(self):
        bounds = RateBounds(0.5, 2.0, 0.5, 10.0)
        alloc = uniform_allocate(0, 13.0, 2, bounds)
        # 13/4 = 3.25 clamps both constants at 2.0; the rest splits evenly
        np.testing.assert_allclose(alloc.constant, 2.0)
        np.testing.assert_allclose(alloc.switching, 4.5)
        assert alloc.total == pytest.approx(13.0, abs=1e-12)

    def test_infeasible_flags(self):
        bounds = RateBounds(1.0, 2.0, 1.0, 2.0)
        low = uniform_allocate(0, 1.0, 2, bounds)
        assert low.flags == ("Infeasible",)
        np.testing.assert_array_equal(low.constant, 1.0)
        high = uniform_allocate(0, 100.0, 2, bounds)
        assert high.flags == ("Infeasible",)
        np.testing.assert_array_equal(high.constant, 2.0)


class TestSchedule:
    def test_window_compensates_overspend(self):
        schedule = BudgetSchedule(r_tar=10.0, sw=4)
        bounds = RateBounds(0.01, 100.0, 0.01, 100.0)
        first, infeasible = target_bits(schedule, bounds, 2)
        assert (first, infeasible) == (10.0, False)
        schedule.record(9.0)
        schedule.record(8.0)
        budget, infeasible = target_bits(schedule, bounds, 2)
        # (10 * 6 - 17) / 4
        assert budget == pytest.approx(10.75)
        assert not infeasible

    def test_floor_kicks_in(self):
        schedule = BudgetSchedule(r_tar=10.0, sw=2)
        schedule.record(100.0)  # massive overshoot
        bounds = RateBounds(1.0, 5.0, 1.0, 5.0)
        budget, infeasible = target_bits(schedule, bounds, 3)
        assert budget == pytest.approx(6.0)  # 3 * (1 + 1)
        assert infeasible

    def test_long_run_average_approaches_target(self):
        schedule = BudgetSchedule(r_tar=10.0, sw=4)
        bounds = RateBounds(0.001, 1000.0, 0.001, 1000.0)
        rng = np.random.default_rng(6)
        for _ in range(400):
            budget, _ = target_bits(schedule, bounds, 2)
            # spend within +-5% of the granted budget
            schedule.record(budget * rng.uniform(0.95, 1.05))
        assert schedule.r_coded / schedule.n_coded == pytest.approx(10.0, rel=0.01)

    def test_validation(self):
        with pytest.raises(ConfigError):
            BudgetSchedule(r_tar=0.0)
        with pytest.raises(ConfigError):
            BudgetSchedule(r_tar=1.0, sw=0)


class TestParamValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            QoeParams(eta=0.0)
        with pytest.raises(ConfigError):
            QoeParams(mu1=-0.1)
        with pytest.raises(ConfigError):
            QoeParams(epsilon=0.0)
        with pytest.raises(ConfigError):
            QoeParams(lambda_max=0.0)
        with pytest.raises(ConfigError):
            RateBounds(2.0, 1.0, 0.5, 1.0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        params = QoeParams()
        bounds = RateBounds.default_for(20.0, 3)
        rng = np.random.default_rng(7)
        allocations = []
        prev = np.full(3, 20.0 / 6)
        for j in range(3):
            w = rng.dirichlet(np.ones(6))
            alloc = allocate(j, 18.0, w[:3], w[3:], prev, params, bounds)
            allocations.append(alloc)
            prev = alloc.constant
        path = tmp_path / "alloc.csv"
        write_allocation_csv(allocations, path)
        back = read_allocation_csv(path)
        assert len(back) == 3
        for orig, rt in zip(allocations, back):
            assert rt.chunk == orig.chunk
            assert rt.flags == orig.flags
            np.testing.assert_allclose(rt.constant, orig.constant, atol=1e-9)
            np.testing.assert_allclose(rt.switching, orig.switching, atol=1e-9)
            assert rt.lam == pytest.approx(orig.lam, abs=1e-9)

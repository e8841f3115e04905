"""Tests for star_uav.power."""

from __future__ import annotations

import math
from dataclasses import replace
from unittest.mock import patch

import numpy as np
import pytest

from star_uav.channel import rates_from_gains
from star_uav.conic import ConicSolution, solve
from star_uav.power import (
    CumulativePower,
    PowerAllocation,
    assemble_power_slot,
    from_cumulative,
    optimize_power,
    power_surrogate,
    to_cumulative,
)
from star_uav.scenario import Space, UserSpec, default_scenario
from star_uav.settings import SolverSettings

TWO_USERS = (
    UserSpec((-20.0, 10.0), Space.TRANSMISSION, 1),
    UserSpec((15.0, 5.0), Space.REFLECTION, 2),
)


def _slot_rate(gains, p, sigma2):
    return float(np.sum(rates_from_gains(gains, p, sigma2)))


def two_user_scenario(N=1, **kw):
    return default_scenario(users=TWO_USERS, N=N, q_start=(10.0, 0.0), q_end=(10.0, 0.0), **kw)


class TestAllocation:
    def test_proportional(self):
        s = default_scenario(N=2, D=300.0)
        p = PowerAllocation.proportional(s).validate(s.P_max).p
        np.testing.assert_allclose(p[:, 0], [0.4, 0.3, 0.2, 0.1])
        np.testing.assert_allclose(p.sum(axis=0), s.P_max)

    def test_increasing_rejected(self):
        with pytest.raises(ValueError, match="must not increase"):
            PowerAllocation(p=np.array([[0.2], [0.5]])).validate(1.0)

    def test_budget_checked(self):
        with pytest.raises(ValueError, match="exceeds P_max"):
            PowerAllocation(p=np.array([[0.7], [0.6]])).validate(1.0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            PowerAllocation(p=np.array([[0.5], [-0.1]])).validate(1.0)


class TestCumulative:
    def test_to_cumulative(self):
        psi = to_cumulative(PowerAllocation(p=np.array([[0.5], [0.3], [0.2]])), 1.0).psi
        np.testing.assert_allclose(psi[:, 0], [1.0, 0.5, 0.2])

    def test_inverse(self):
        p = np.array([[0.5, 0.6], [0.3, 0.4], [0.2, 0.0]])
        back = from_cumulative(to_cumulative(PowerAllocation(p=p)), 1.0).p
        np.testing.assert_allclose(back, p)

    def test_all_power_to_first_user(self):
        p = from_cumulative(CumulativePower(psi=np.array([[2.0], [0.0], [0.0]])), 2.0).p
        np.testing.assert_allclose(p[:, 0], [2.0, 0.0, 0.0])

    def test_increasing_differences_rejected(self):
        # p = (0.1, 0.4): later user gets more power
        with pytest.raises(ValueError, match="nonincreasing"):
            CumulativePower(psi=np.array([[0.5], [0.4]])).validate()

    def test_budget_checked(self):
        with pytest.raises(ValueError, match="exceeds P_max"):
            CumulativePower(psi=np.array([[1.5], [0.5]])).validate(1.0)


class TestSurrogate:
    def test_tight_at_expansion_point(self):
        gains = np.array([1e-9, 3e-9, 4e-9])
        p = np.array([0.5, 0.3, 0.2])
        psi = np.cumsum(p[::-1])[::-1]
        exact = float(np.sum(rates_from_gains(gains, p, 1e-11)))
        assert power_surrogate(gains, psi, psi, 1e-11) == pytest.approx(exact, rel=1e-10)

    def test_lower_bound(self):
        gains = np.array([1e-9, 3e-9, 4e-9])
        point = np.array([1.0, 0.5, 0.2])
        rng = np.random.default_rng(0)
        for _ in range(1000):
            p = np.sort(rng.uniform(0, 1, 3))[::-1]
            p = p / p.sum() * rng.uniform(0.1, 1.0)
            psi = np.cumsum(p[::-1])[::-1]
            exact = float(np.sum(rates_from_gains(gains, p, 1e-11)))
            assert power_surrogate(gains, psi, point, 1e-11) <= exact + 1e-9


class TestAssemble:
    def test_single_user_takes_budget(self):
        s = default_scenario(
            users=(UserSpec((15.0, 5.0), Space.REFLECTION, 1),),
            N=1,
            q_start=(10.0, 0.0),
            q_end=(10.0, 0.0),
            P_max=0.5,
        )
        sol = solve(assemble_power_slot(np.array([2e-9]), np.array([0.1]), s))
        assert sol.optimal
        assert float(sol["psi"][0]) == pytest.approx(0.5, abs=1e-6)

    def test_matches_grid_search(self):
        s = two_user_scenario()
        gains = np.array([1e-9, 4e-9])
        point = np.array([1.0, 1.0 / 3.0])
        sol = solve(assemble_power_slot(gains, point, s))
        solved = power_surrogate(gains, sol["psi"], point, s.sigma2)

        grid = np.linspace(0.0, 1.0, 1001)
        psi1, psi2 = np.meshgrid(grid, grid, indexing="ij")
        feasible = psi2 <= psi1 / 2
        nxt0 = point[1]
        values = (
            np.log2(gains[0] * psi1 + s.sigma2)
            - np.log2(gains[0] * nxt0 + s.sigma2)
            - gains[0] / (gains[0] * nxt0 + s.sigma2) / math.log(2) * (psi2 - nxt0)
            + np.log2(gains[1] * psi2 + s.sigma2)
            - np.log2(s.sigma2)
        )
        best = float(np.max(np.where(feasible, values, -np.inf)))
        assert solved >= best - 1e-6

    def test_shape_checked(self):
        s = two_user_scenario()
        with pytest.raises(ValueError, match="expected"):
            assemble_power_slot(np.ones(2), np.ones(3), s)

    def test_order_constraint_labelled(self):
        s = two_user_scenario()
        prob = assemble_power_slot(np.array([1e-9, 2e-9]), np.array([1.0, 0.4]), s)
        assert [c.label for c in prob.constraints] == ["budget", "power order"]


class TestOptimizePower:
    def test_low_snr_optimum(self):
        # with SNRs 1 and 4 per watt the rate grows with the second user's share,
        # so the optimum splits the budget evenly
        s = two_user_scenario()
        gains = np.array([[1e-11], [4e-11]])
        settings = SolverSettings(power_delta=1e-9, power_max_iters=100)
        power, report = optimize_power(s, gains, PowerAllocation.proportional(s), settings)
        np.testing.assert_allclose(power.p[:, 0], [0.5, 0.5], atol=1e-4)

        grid = np.linspace(0.0, 1.0, 1001)
        p1, p2 = np.meshgrid(grid, grid, indexing="ij")
        feasible = (p2 <= p1) & (p1 + p2 <= 1.0 + 1e-12)
        g1, g2 = gains[:, 0]
        rates = np.log2(1 + p1 * g1 / (p2 * g1 + s.sigma2)) + np.log2(1 + p2 * g2 / s.sigma2)
        best = float(np.max(np.where(feasible, rates, -np.inf)))
        assert report.rate_after >= best - 1e-5

    def test_equal_gains_use_full_budget(self):
        s = two_user_scenario()
        g = 2e-9
        power, report = optimize_power(
            s, np.array([[g], [g]]), PowerAllocation.proportional(s), SolverSettings()
        )
        assert report.rate_after == pytest.approx(math.log2(1 + s.P_max * g / s.sigma2), abs=1e-6)
        power.validate(s.P_max, tol=1e-7)

    def test_full_budget_and_monotone(self):
        s = default_scenario(N=3, D=200.0)
        rng = np.random.default_rng(0)
        gains = np.sort(rng.uniform(1e-10, 1e-8, (s.K, s.N)), axis=0)
        init = PowerAllocation.proportional(s)
        power, report = optimize_power(s, gains, init)
        power.validate(s.P_max, tol=1e-7)
        np.testing.assert_allclose(power.p.sum(axis=0), s.P_max, rtol=1e-5)
        before = sum(_slot_rate(gains[:, n], init.p[:, n], s.sigma2) for n in range(3))
        after = sum(_slot_rate(gains[:, n], power.p[:, n], s.sigma2) for n in range(3))
        assert after >= before
        assert after == pytest.approx(report.rate_after)
        assert report.status in ("ok", "flagged")

    def test_zero_budget(self):
        s = replace(two_user_scenario(N=2, D=0.0), P_max=0.0)
        power, report = optimize_power(
            s, np.ones((2, 2)) * 1e-9, PowerAllocation(p=np.zeros((2, 2)))
        )
        np.testing.assert_array_equal(power.p, 0.0)
        assert report.status == "ok"

    def test_shape_checked(self):
        s = two_user_scenario()
        with pytest.raises(ValueError, match="must have shape"):
            optimize_power(s, np.ones((3, 1)), PowerAllocation.proportional(s))

    def test_slots_independent(self):
        s = two_user_scenario(N=2, D=0.0)
        gains = np.array([[1e-9, 5e-10], [3e-9, 2e-9]])
        joint, _ = optimize_power(s, gains, PowerAllocation.proportional(s))
        single = replace(s, N=1)
        for n in range(2):
            alone, _ = optimize_power(
                single, gains[:, n : n + 1], PowerAllocation.proportional(single)
            )
            np.testing.assert_allclose(joint.p[:, n], alone.p[:, 0], atol=1e-9)

    def test_matches_grid_search_over_instances(self):
        s = two_user_scenario()
        settings = SolverSettings(power_delta=1e-9, power_max_iters=100)
        grid = np.linspace(0.0, s.P_max, 1001)
        p1, p2 = np.meshgrid(grid, grid, indexing="ij")
        feasible = (p2 <= p1) & (p1 + p2 <= s.P_max * (1 + 1e-12))
        rng = np.random.default_rng(11)
        for _ in range(20):
            g1 = s.sigma2 * rng.uniform(0.5, 50.0)
            g2 = g1 * rng.uniform(1.5, 10.0)
            power, report = optimize_power(
                s, np.array([[g1], [g2]]), PowerAllocation.proportional(s), settings
            )
            power.validate(s.P_max, tol=1e-7)
            rates = np.log2(1 + p1 * g1 / (p2 * g1 + s.sigma2)) + np.log2(1 + p2 * g2 / s.sigma2)
            best = float(np.max(np.where(feasible, rates, -np.inf)))
            assert report.rate_after >= best - 1e-5

    def test_numerical_trouble_on_first_step_is_flagged(self):
        s = two_user_scenario()
        init = PowerAllocation.proportional(s)
        with patch("star_uav.power.solve", return_value=ConicSolution(status="numerical-failure")):
            power, report = optimize_power(s, np.array([[1e-9], [4e-9]]), init)
        assert report.status == "flagged"
        np.testing.assert_array_equal(power.p, init.p)

    def test_infeasible_first_step_fails(self):
        s = two_user_scenario()
        with patch("star_uav.power.solve", return_value=ConicSolution(status="infeasible")):
            _, report = optimize_power(
                s, np.array([[1e-9], [4e-9]]), PowerAllocation.proportional(s)
            )
        assert report.failed

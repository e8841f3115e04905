"""Tests for star_uav.channel."""

from __future__ import annotations

import math

import numpy as np
import pytest

from star_uav.beamforming import BeamformingSchedule
from star_uav.channel import (
    FadingDraws,
    channel_gains,
    combined_gain,
    compute_channel_slot,
    rates_from_gains,
    sample_fading,
    slot_gains,
    steering,
    sum_rate,
    user_rate,
)
from star_uav.power import PowerAllocation
from star_uav.scenario import default_scenario
from star_uav.trajectory import Trajectory


class TestFading:
    def test_deterministic_per_seed(self):
        s = default_scenario()
        a = sample_fading(s)
        b = sample_fading(s)
        np.testing.assert_array_equal(a.h_tilde, b.h_tilde)
        assert a.h_tilde.shape == (s.K, s.N)

    def test_seed_changes_draws(self):
        a = sample_fading(default_scenario(seed=0))
        b = sample_fading(default_scenario(seed=1))
        assert not np.allclose(a.h_tilde, b.h_tilde)

    def test_independent_of_element_count(self):
        a = sample_fading(default_scenario(M=8))
        b = sample_fading(default_scenario(M=16))
        np.testing.assert_array_equal(a.h_tilde, b.h_tilde)

    def test_read_only(self):
        draws = sample_fading(default_scenario())
        with pytest.raises(ValueError):
            draws.h_tilde[0, 0] = 0.0


class TestSteering:
    def test_unit_modulus_and_first_element(self):
        a = steering(6, 0.5, 0.3)
        assert a.shape == (6,)
        np.testing.assert_allclose(np.abs(a), 1.0)
        assert a[0] == pytest.approx(1.0)

    def test_phase_progression(self):
        a = steering(3, 0.5, 1.0)
        # half-wavelength spacing at endfire: alternating signs
        np.testing.assert_allclose(a, [1.0, -1.0, 1.0], atol=1e-12)

    def test_batched(self):
        a = steering(4, 0.5, np.array([0.0, 0.5]))
        assert a.shape == (2, 4)
        np.testing.assert_allclose(a[0], 1.0)


class TestChannelSlot:
    def test_distances_and_path_loss(self):
        s = default_scenario()
        draws = sample_fading(s)
        q = np.array([10.0, -50.0])
        slot = compute_channel_slot(s, draws, q, 3)

        users = s.user_positions
        d_ug = np.sqrt(s.H**2 + np.sum((q - users) ** 2, axis=1))
        np.testing.assert_allclose(slot.d_ug, d_ug)
        d_ur = math.sqrt((s.H - s.z_R) ** 2 + float(np.sum(q**2)))
        assert slot.d_ur == pytest.approx(d_ur)
        np.testing.assert_allclose(np.abs(slot.g_ur), math.sqrt(s.xi / d_ur**s.o2))
        d_rg = np.sqrt(s.z_R**2 + np.sum(users**2, axis=1))
        np.testing.assert_allclose(
            np.abs(slot.g_rg), np.sqrt(s.xi / d_rg**s.o3)[:, None] * np.ones((1, s.M))
        )
        np.testing.assert_allclose(
            slot.h_direct, np.sqrt(s.xi / d_ug**s.o1) * draws.h_tilde[:, 3]
        )

    def test_rejects_bad_position(self):
        s = default_scenario()
        with pytest.raises(ValueError, match="Invalid UAV position"):
            compute_channel_slot(s, sample_fading(s), [np.nan, 0.0], 0)


class TestGains:
    def test_zero_beam_is_direct_link(self):
        s = default_scenario()
        slot = compute_channel_slot(s, sample_fading(s), [10.0, 0.0], 0)
        for k in range(s.K):
            assert combined_gain(slot, np.zeros(s.M), k) == pytest.approx(
                abs(slot.h_direct[k]) ** 2
            )

    def test_co_phased_beam_adds_magnitudes(self):
        s = default_scenario()
        slot = compute_channel_slot(s, sample_fading(s), [10.0, 0.0], 0)
        k = 2
        phase = np.angle(slot.g_ur) - np.angle(slot.g_rg[k]) - np.angle(slot.h_direct[k])
        beam = np.exp(-1j * phase)
        expected = (
            abs(slot.h_direct[k]) + np.sum(np.abs(slot.g_rg[k]) * np.abs(slot.g_ur))
        ) ** 2
        assert combined_gain(slot, beam, k) == pytest.approx(expected, rel=1e-10)

    def test_shape_checked(self):
        s = default_scenario()
        slot = compute_channel_slot(s, sample_fading(s), [10.0, 0.0], 0)
        with pytest.raises(ValueError, match="expected"):
            combined_gain(slot, np.zeros(s.M + 1), 0)

    def test_users_see_their_own_space(self):
        s = default_scenario()
        slot = compute_channel_slot(s, sample_fading(s), [10.0, 0.0], 0)
        u_r = np.ones(s.M, dtype=complex)
        u_t = np.zeros(s.M, dtype=complex)
        gains = slot_gains(slot, u_r, u_t, s.user_modes)
        # transmission users get only the direct link
        for k in range(3):
            assert gains[k] == pytest.approx(abs(slot.h_direct[k]) ** 2)
        assert gains[3] == pytest.approx(combined_gain(slot, u_r, 3))


class TestRates:
    def test_single_user(self):
        assert user_rate(1e-9, [1.0], 0, 1e-11) == pytest.approx(math.log2(101.0))

    def test_interference_from_later_users(self):
        rate = user_rate(2.0, [0.6, 0.3, 0.1], 0, 1.0)
        assert rate == pytest.approx(math.log2(1.0 + 1.2 / (0.8 + 1.0)))

    def test_vectorized_matches_scalar(self):
        gains = np.array([1e-9, 3e-9, 5e-9])
        powers = np.array([0.5, 0.3, 0.2])
        expected = [user_rate(gains[k], powers, k, 1e-11) for k in range(3)]
        np.testing.assert_allclose(rates_from_gains(gains, powers, 1e-11), expected)

    def test_zero_power_zero_rate(self):
        np.testing.assert_allclose(rates_from_gains([1e-9, 2e-9], [0.0, 0.0], 1e-11), 0.0)


class TestSumRate:
    def test_slot_n_uses_waypoint_n(self):
        s = default_scenario(N=3, D=200.0)
        draws = sample_fading(s)
        traj = Trajectory.straight_line(s)
        beams = BeamformingSchedule.uniform(s.N, s.M)
        gains = channel_gains(s, draws, traj, beams)
        slot = compute_channel_slot(s, draws, traj.q[2], 2)
        u_r, u_t = beams.vectors(2)
        np.testing.assert_allclose(gains[:, 2], slot_gains(slot, u_r, u_t, s.user_modes))

    def test_total_is_sum_of_matrix(self):
        s = default_scenario(N=4, D=200.0)
        draws = sample_fading(s)
        report = sum_rate(
            s,
            draws,
            Trajectory.straight_line(s),
            BeamformingSchedule.uniform(s.N, s.M),
            PowerAllocation.proportional(s),
        )
        assert report.rates.shape == (s.K, s.N)
        assert report.total == pytest.approx(report.rates.sum())
        assert np.all(report.rates >= 0)

    def test_power_shape_checked(self):
        s = default_scenario(N=4, D=200.0)
        with pytest.raises(ValueError, match="Power allocation has shape"):
            sum_rate(
                s,
                sample_fading(s),
                Trajectory.straight_line(s),
                BeamformingSchedule.uniform(s.N, s.M),
                PowerAllocation(p=np.ones((s.K, 1))),
            )

    def test_zero_fading_leaves_cascade(self):
        s = default_scenario(N=1, D=600.0)
        draws = FadingDraws(h_tilde=np.zeros((s.K, 1), dtype=complex))
        report = sum_rate(
            s,
            draws,
            Trajectory.straight_line(s),
            BeamformingSchedule.uniform(s.N, s.M),
            PowerAllocation.proportional(s),
        )
        assert report.total > 0

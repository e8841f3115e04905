"""Channel model: fading draws, per-slot channel vectors, combined gains and NOMA rates."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from star_uav.scenario import Scenario

if TYPE_CHECKING:
    from star_uav.beamforming import BeamformingSchedule
    from star_uav.power import PowerAllocation
    from star_uav.trajectory import Trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FadingDraws:
    """Rayleigh draws of the UAV-user links, shape (K, N), fixed for a whole experiment."""

    h_tilde: np.ndarray

    @property
    def K(self) -> int:
        return self.h_tilde.shape[0]

    @property
    def N(self) -> int:
        return self.h_tilde.shape[1]


def sample_fading(scenario: Scenario) -> FadingDraws:
    """Draw unit-variance circularly-symmetric Gaussians from the scenario seed."""
    rng = np.random.default_rng(scenario.seed)
    shape = (scenario.K, scenario.N)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    h.setflags(write=False)
    return FadingDraws(h_tilde=h)


@dataclass(frozen=True)
class ChannelSlot:
    """All channel quantities of one slot; users in decoding order."""

    h_direct: np.ndarray  # (K,)
    g_ur: np.ndarray  # (M,)
    g_rg: np.ndarray  # (K, M)
    d_ug: np.ndarray  # (K,)
    d_ur: float
    d_rg: np.ndarray  # (K,)
    theta: np.ndarray  # (M,) unit-modulus steering of the UAV-surface link

    @property
    def K(self) -> int:
        return self.h_direct.shape[0]

    @property
    def M(self) -> int:
        return self.g_ur.shape[0]


def steering(M: int, d_over_lambda: float, cos_angle) -> np.ndarray:
    """Uniform linear array response exp(-j 2pi m d/lambda cos), m = 0..M-1.

    ``cos_angle`` may be a scalar (returns shape (M,)) or an array (returns (..., M)).
    """
    m = np.arange(M)
    cos_angle = np.asarray(cos_angle, dtype=float)
    return np.exp(-2j * np.pi * d_over_lambda * cos_angle[..., None] * m)


def surface_user_distances(scenario: Scenario) -> np.ndarray:
    offsets = scenario.user_positions - scenario.surface_position
    return np.sqrt(scenario.z_R**2 + np.sum(offsets**2, axis=1))


def compute_channel_slot(
    scenario: Scenario, fading: FadingDraws, q_n, n: int
) -> ChannelSlot:
    """Channel vectors of slot ``n`` (0-based) with the UAV at horizontal position ``q_n``."""
    q_n = np.asarray(q_n, dtype=float)
    if q_n.shape != (2,) or not np.all(np.isfinite(q_n)):
        raise ValueError(f"Invalid UAV position {q_n!r}: need a finite 2-vector")

    users = scenario.user_positions
    x_R = scenario.surface_position[0]

    d_ug = np.sqrt(scenario.H**2 + np.sum((q_n - users) ** 2, axis=1))
    d_ur = float(
        np.sqrt((scenario.H - scenario.z_R) ** 2 + np.sum((q_n - scenario.surface_position) ** 2))
    )
    d_rg = surface_user_distances(scenario)

    theta = steering(scenario.M, scenario.d_over_lambda, (x_R - q_n[0]) / d_ur)
    g_ur = np.sqrt(scenario.xi / d_ur**scenario.o2) * theta

    phi_rg = (x_R - users[:, 0]) / d_rg
    g_rg = np.sqrt(scenario.xi / d_rg**scenario.o3)[:, None] * steering(
        scenario.M, scenario.d_over_lambda, phi_rg
    )

    h_direct = np.sqrt(scenario.xi / d_ug**scenario.o1) * fading.h_tilde[:, n]

    return ChannelSlot(
        h_direct=h_direct,
        g_ur=g_ur,
        g_rg=g_rg,
        d_ug=d_ug,
        d_ur=d_ur,
        d_rg=d_rg,
        theta=theta,
    )


def combined_gain(slot: ChannelSlot, beam, k: int) -> float:
    """|h_k + (g_k^rg)^H diag(u) g^ur|^2 for user ``k`` served by beam vector ``u``."""
    beam = np.asarray(beam)
    if beam.shape != (slot.M,):
        raise ValueError(f"Beam has shape {beam.shape}, expected ({slot.M},)")
    cascade = np.sum(np.conj(slot.g_rg[k]) * beam * slot.g_ur)
    return float(np.abs(slot.h_direct[k] + cascade) ** 2)


def slot_gains(slot: ChannelSlot, u_r, u_t, modes) -> np.ndarray:
    """Gains of all users in one slot; each user sees only its own space's beam."""
    beams = (np.asarray(u_r), np.asarray(u_t))
    return np.array([combined_gain(slot, beams[modes[k]], k) for k in range(slot.K)])


def user_rate(gain_k: float, powers, k: int, sigma2: float) -> float:
    """NOMA rate (bits/s/Hz) of user ``k`` after cancelling users decoded before it."""
    powers = np.asarray(powers, dtype=float)
    interference = float(np.sum(powers[k + 1 :])) * gain_k
    return float(np.log2(1.0 + powers[k] * gain_k / (interference + sigma2)))


def rates_from_gains(gains, powers, sigma2: float) -> np.ndarray:
    """Vectorized ``user_rate`` over all users of one slot."""
    gains = np.asarray(gains, dtype=float)
    powers = np.asarray(powers, dtype=float)
    tail = np.cumsum(powers[::-1])[::-1] - powers  # sum_{i>k} p_i
    return np.log2(1.0 + powers * gains / (tail * gains + sigma2))


def channel_gains(
    scenario: Scenario,
    fading: FadingDraws,
    trajectory: Trajectory,
    beams: BeamformingSchedule,
) -> np.ndarray:
    """True combined gains |g_kn|^2, shape (K, N)."""
    modes = scenario.user_modes
    gains = np.empty((scenario.K, scenario.N))
    for n in range(scenario.N):
        slot = compute_channel_slot(scenario, fading, trajectory.q[n], n)
        u_r, u_t = beams.vectors(n)
        gains[:, n] = slot_gains(slot, u_r, u_t, modes)
    return gains


@dataclass(frozen=True)
class RateReport:
    total: float
    rates: np.ndarray  # (K, N) bits/s/Hz


def sum_rate(
    scenario: Scenario,
    fading: FadingDraws,
    trajectory: Trajectory,
    beams: BeamformingSchedule,
    power: PowerAllocation,
) -> RateReport:
    """Sum over slots and users of the true NOMA rates, plus the per-(k, n) matrix."""
    if power.p.shape != (scenario.K, scenario.N):
        raise ValueError(
            f"Power allocation has shape {power.p.shape}, expected ({scenario.K}, {scenario.N})"
        )
    gains = channel_gains(scenario, fading, trajectory, beams)
    rates = np.empty_like(gains)
    for n in range(scenario.N):
        rates[:, n] = rates_from_gains(gains[:, n], power.p[:, n], scenario.sigma2)
    return RateReport(total=float(np.sum(rates)), rates=rates)

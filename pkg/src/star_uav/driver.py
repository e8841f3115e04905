"""Alternating optimization: beams, then trajectory, then powers, until the sum rate settles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from star_uav.beamforming import BeamformingSchedule, optimize_beamforming
from star_uav.channel import (
    FadingDraws,
    channel_gains,
    compute_channel_slot,
    sample_fading,
    sum_rate,
)
from star_uav.power import PowerAllocation, optimize_power
from star_uav.report import SolveReport
from star_uav.scenario import Scenario
from star_uav.settings import SolverSettings
from star_uav.trajectory import Trajectory, optimize_trajectory

log = logging.getLogger(__name__)


@dataclass
class JointSolution:
    beams: BeamformingSchedule
    trajectory: Trajectory
    power: PowerAllocation
    rate_trace: list[tuple[int, float]] = field(default_factory=list)
    reports: list[SolveReport] = field(default_factory=list)
    monotonicity_violations: int = 0
    # reports of the cycle that produced the carried iterate (the first cycle if none improved)
    iterate_reports: list[SolveReport] = field(default_factory=list)

    @property
    def sum_rate(self) -> float:
        """Best true sum rate seen (the one this solution carries)."""
        return max(rate for _, rate in self.rate_trace) if self.rate_trace else 0.0

    @property
    def status(self) -> str:
        """Worst status over the reports behind the carried iterate."""
        merged = SolveReport(name="run")
        for r in self.iterate_reports or self.reports:
            merged.set_status(r.status)
        return merged.status

    @property
    def warnings(self) -> list[str]:
        return [w for r in self.reports for w in r.warnings]

    def min_distance_to_surface(self, scenario: Scenario) -> float:
        return self.trajectory.min_distance_to(scenario.surface_position)

    def mean_split(self) -> np.ndarray:
        """Per-slot mean over elements of (beta_r, beta_t), shape (N, 2)."""
        return self.beams.beta.mean(axis=1)


def _aligned_phases(scenario: Scenario, fading: FadingDraws, q_mid) -> np.ndarray:
    """Per-element phases (M, 2) that co-phase the cascade with the direct link of the
    user of each mode nearest to ``q_mid``; zeros for a mode without users."""
    n_mid = scenario.N // 2
    slot = compute_channel_slot(scenario, fading, q_mid, n_mid)
    modes = scenario.user_modes
    theta = np.zeros((scenario.M, 2))
    for mode in (0, 1):
        users = np.flatnonzero(modes == mode)
        if users.size == 0:
            continue
        k = users[np.argmin(slot.d_ug[users])]
        phase = np.angle(slot.g_ur) - np.angle(slot.g_rg[k]) - np.angle(slot.h_direct[k])
        theta[:, mode] = np.mod(phase, 2 * np.pi)
    theta[theta >= 2 * np.pi] = 0.0
    return theta


def initialize(
    scenario: Scenario, fading: FadingDraws, fixed_beta_r: np.ndarray | None = None
) -> tuple[BeamformingSchedule, Trajectory, PowerAllocation]:
    """Straight-line flight, even split (or the fixed amplitudes), co-phased elements
    and decreasing powers."""
    trajectory = Trajectory.straight_line(scenario)
    beams = BeamformingSchedule.uniform(scenario.N, scenario.M)
    if fixed_beta_r is not None:
        fixed = np.broadcast_to(np.asarray(fixed_beta_r, dtype=float), (scenario.N, scenario.M))
        beams.beta[:, :, 0] = fixed
        beams.beta[:, :, 1] = 1.0 - fixed
    theta = _aligned_phases(scenario, fading, trajectory.q[scenario.N // 2])
    beams.theta[:] = theta[None, :, :]
    return beams, trajectory, PowerAllocation.proportional(scenario)


def run(
    scenario: Scenario,
    settings: SolverSettings | None = None,
    *,
    fading: FadingDraws | None = None,
    fixed_beta_r: np.ndarray | None = None,
    start: JointSolution | None = None,
) -> JointSolution:
    """Alternate the three subproblems until the true sum rate gains less than
    ``outer_delta`` or ``outer_max_iters`` cycles ran; returns the best cycle.

    ``start`` replaces the straight-line initialization with a finished iterate.
    """
    settings = settings or SolverSettings()
    fading = fading if fading is not None else sample_fading(scenario)
    if start is None:
        beams, trajectory, power = initialize(scenario, fading, fixed_beta_r)
    else:
        beams, trajectory, power = start.beams.copy(), start.trajectory.copy(), start.power.copy()

    rate = sum_rate(scenario, fading, trajectory, beams, power).total
    solution = JointSolution(
        beams=beams, trajectory=trajectory, power=power, rate_trace=[(0, rate)]
    )
    log.info("Initial sum rate %.4f bits/s/Hz", rate)
    best_rate, prev = rate, rate

    for outer in range(1, settings.outer_max_iters + 1):
        beams, beam_report = optimize_beamforming(
            scenario, fading, trajectory, power, beams, settings, fixed_beta_r=fixed_beta_r
        )
        trajectory, traj_report = optimize_trajectory(
            scenario, fading, beams, power, trajectory, settings
        )
        gains = channel_gains(scenario, fading, trajectory, beams)
        power, power_report = optimize_power(scenario, gains, power, settings)
        cycle = [beam_report, traj_report, power_report]
        solution.reports.extend(cycle)
        if outer == 1:
            solution.iterate_reports = cycle

        rate = sum_rate(scenario, fading, trajectory, beams, power).total
        solution.rate_trace.append((outer, rate))
        log.info("Outer iteration %d: sum rate %.4f", outer, rate)
        if rate < prev - settings.monotone_tol:
            solution.monotonicity_violations += 1
            log.warning("Sum rate fell from %.6f to %.6f at iteration %d", prev, rate, outer)
        if rate > best_rate:
            best_rate = rate
            solution.beams, solution.trajectory, solution.power = beams, trajectory, power
            solution.iterate_reports = cycle
        if rate - prev < settings.outer_delta:
            break
        prev = rate
    else:
        log.warning("Outer iteration cap %d reached", settings.outer_max_iters)

    log.info("Final sum rate %.4f (%s)", solution.sum_rate, solution.status)
    return solution

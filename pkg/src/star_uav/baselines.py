"""Comparison schemes: a split reflect-only / transmit-only surface, and mode selection."""

from __future__ import annotations

import logging

import numpy as np

from star_uav.beamforming import BeamformingSchedule, optimize_beamforming
from star_uav.channel import (
    FadingDraws,
    compute_channel_slot,
    rates_from_gains,
    sample_fading,
    slot_gains,
    sum_rate,
)
from star_uav.driver import JointSolution, run
from star_uav.scenario import Scenario, ScenarioError
from star_uav.settings import SolverSettings

log = logging.getLogger(__name__)


def conventional_pattern(M: int) -> np.ndarray:
    """Reflection amplitudes of the split surface: first half reflects, second half transmits."""
    if M % 2:
        raise ScenarioError(
            f"Conventional RIS needs an even element count, got M={M}", invariant="M even"
        )
    return np.concatenate([np.ones(M // 2), np.zeros(M // 2)])


def conventional_ris(
    scenario: Scenario,
    settings: SolverSettings | None = None,
    *,
    fading: FadingDraws | None = None,
) -> JointSolution:
    """Alternating optimization with amplitudes pinned to the split pattern; phases,
    trajectory and powers are optimized."""
    pattern = conventional_pattern(scenario.M)
    return run(scenario, settings, fading=fading, fixed_beta_r=pattern)


def _binary_schedule(beams: BeamformingSchedule, pattern: np.ndarray) -> BeamformingSchedule:
    out = beams.copy()
    out.beta[:, :, 0] = pattern
    out.beta[:, :, 1] = 1.0 - pattern
    return out


def round_and_repair(
    scenario: Scenario,
    fading: FadingDraws,
    trajectory,
    power,
    beams: BeamformingSchedule,
) -> np.ndarray:
    """Binary reflection pattern (N, M): round beta_r at 0.5, then flip single elements
    per slot while a flip raises the slot's true sum rate."""
    pattern = (beams.beta[:, :, 0] >= 0.5).astype(float)
    modes = scenario.user_modes
    for n in range(scenario.N):
        slot = compute_channel_slot(scenario, fading, trajectory.q[n], n)
        phases = np.exp(-1j * beams.theta[n])

        def slot_rate(row: np.ndarray) -> float:
            u_r = np.sqrt(row) * phases[:, 0]
            u_t = np.sqrt(1.0 - row) * phases[:, 1]
            gains = slot_gains(slot, u_r, u_t, modes)
            return float(np.sum(rates_from_gains(gains, power.p[:, n], scenario.sigma2)))

        row = pattern[n].copy()
        current = slot_rate(row)
        improved = True
        while improved:
            improved = False
            for m in range(scenario.M):
                trial = row.copy()
                trial[m] = 1.0 - trial[m]
                rate = slot_rate(trial)
                if rate > current + 1e-12:
                    row, current, improved = trial, rate, True
        pattern[n] = row
    return pattern


def mode_selection(
    scenario: Scenario,
    settings: SolverSettings | None = None,
    *,
    fading: FadingDraws | None = None,
    es: JointSolution | None = None,
) -> JointSolution:
    """Energy-splitting solution rounded to binary element modes, repaired by greedy
    flips, then one phase re-optimization with the binary amplitudes held fixed."""
    settings = settings or SolverSettings()
    fading = fading if fading is not None else sample_fading(scenario)
    if es is None:
        es = run(scenario, settings, fading=fading)

    pattern = round_and_repair(scenario, fading, es.trajectory, es.power, es.beams)
    rounded = _binary_schedule(es.beams, pattern)
    start = sum_rate(scenario, fading, es.trajectory, rounded, es.power).total
    log.info("Mode selection: rounded rate %.4f (energy splitting %.4f)", start, es.sum_rate)

    beams, report = optimize_beamforming(
        scenario, fading, es.trajectory, es.power, rounded, settings, fixed_beta_r=pattern
    )
    beams = _binary_schedule(beams, pattern)
    rate = sum_rate(scenario, fading, es.trajectory, beams, es.power).total
    if rate < start:
        beams, rate = rounded, start
    return JointSolution(
        beams=beams,
        trajectory=es.trajectory.copy(),
        power=es.power.copy(),
        rate_trace=[(0, start), (1, rate)],
        reports=[report],
    )


def compare_schemes(
    scenario: Scenario,
    methods,
    settings: SolverSettings | None = None,
    *,
    fading: FadingDraws | None = None,
) -> dict[str, JointSolution]:
    """Solve every scheme in ``methods`` on the same fading draws.

    Mode selection rounds the first energy-splitting run. The split surface is a binary
    pattern too, so when it ends above mode selection, mode selection is repeated from
    it. Both baselines are feasible points of energy splitting, so when one of them ends
    above it, energy splitting is run again from that iterate. The better run is kept
    each time.
    """
    settings = settings or SolverSettings()
    fading = fading if fading is not None else sample_fading(scenario)
    methods = list(methods)
    solved: dict[str, JointSolution] = {}
    if "es" in methods or "ms" in methods:
        solved["es"] = run(scenario, settings, fading=fading)
    if "conventional" in methods:
        solved["conventional"] = conventional_ris(scenario, settings, fading=fading)
    if "ms" in methods:
        ms = mode_selection(scenario, settings, fading=fading, es=solved["es"])
        conventional = solved.get("conventional")
        if conventional is not None and conventional.sum_rate > ms.sum_rate:
            log.info(
                "Mode selection %.4f below the split surface at %.4f, repairing from it",
                ms.sum_rate,
                conventional.sum_rate,
            )
            repaired = mode_selection(scenario, settings, fading=fading, es=conventional)
            if repaired.sum_rate > ms.sum_rate:
                ms = repaired
        solved["ms"] = ms

    if "es" in methods:
        es = solved["es"]
        rivals = [solved[m] for m in ("ms", "conventional") if m in solved]
        best = max(rivals, key=lambda s: s.sum_rate, default=None)
        if best is not None and best.sum_rate > es.sum_rate:
            log.info(
                "Energy splitting %.4f below a baseline at %.4f, restarting from it",
                es.sum_rate,
                best.sum_rate,
            )
            restarted = run(scenario, settings, fading=fading, start=best)
            if restarted.sum_rate > es.sum_rate:
                solved["es"] = restarted
    return {m: solved[m] for m in methods}

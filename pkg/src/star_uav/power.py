"""NOMA power allocation for fixed beams and trajectory, solved in cumulative-power space.

With psi_k = sum_{i>=k} p_i a user's rate is log2(g psi_k + s2) - log2(g psi_{k+1} + s2);
linearizing the second (concave) term gives a concave lower bound, so each iteration
is a small log-objective program per slot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from star_uav.channel import rates_from_gains
from star_uav.conic import ConicProblem, solve
from star_uav.report import SolveReport
from star_uav.scenario import Scenario
from star_uav.settings import SolverSettings
from star_uav.workers import map_ordered

log = logging.getLogger(__name__)

LOG2E = math.log2(math.e)


@dataclass
class PowerAllocation:
    """Per-user, per-slot transmit powers p (K, N) in watts, users in decoding order."""

    p: np.ndarray

    @classmethod
    def proportional(cls, scenario: Scenario) -> PowerAllocation:
        """p_k proportional to K - k (0-based), full budget in every slot."""
        K = scenario.K
        weights = np.arange(K, 0, -1, dtype=float)
        column = scenario.P_max * weights / weights.sum()
        return cls(p=np.tile(column[:, None], (1, scenario.N)))

    def copy(self) -> PowerAllocation:
        return PowerAllocation(p=self.p.copy())

    def validate(self, P_max: float, tol: float = 1e-9) -> PowerAllocation:
        if self.p.ndim != 2:
            raise ValueError(f"Invalid power shape {self.p.shape}")
        if np.any(self.p < -tol):
            raise ValueError("Invalid power allocation: negative power")
        if np.any(np.diff(self.p, axis=0) > tol):
            raise ValueError("Invalid power allocation: powers must not increase in decoding order")
        if np.any(self.p.sum(axis=0) > P_max + tol * max(1.0, P_max)):
            raise ValueError(f"Invalid power allocation: slot total exceeds P_max = {P_max}")
        return self


@dataclass
class CumulativePower:
    """psi (K, N) with psi_k = sum_{i>=k} p_i."""

    psi: np.ndarray

    def validate(self, P_max: float | None = None, tol: float = 1e-9) -> CumulativePower:
        psi = self.psi
        if psi.ndim != 2:
            raise ValueError(f"Invalid cumulative power shape {psi.shape}")
        if P_max is not None and np.any(psi[0] > P_max + tol * max(1.0, P_max)):
            raise ValueError(f"Invalid cumulative power: psi_1 exceeds P_max = {P_max}")
        diffs = _differences(psi)
        if np.any(diffs < -tol) or np.any(np.diff(diffs, axis=0) > tol):
            raise ValueError(
                "Invalid cumulative power: differences must be nonnegative and nonincreasing"
            )
        return self


def _differences(psi: np.ndarray) -> np.ndarray:
    shifted = np.vstack([psi[1:], np.zeros((1,) + psi.shape[1:])])
    return psi - shifted


def to_cumulative(P: PowerAllocation, P_max: float | None = None) -> CumulativePower:
    P.validate(P_max if P_max is not None else float("inf"))
    psi = np.cumsum(P.p[::-1], axis=0)[::-1]
    return CumulativePower(psi=np.ascontiguousarray(psi))


def from_cumulative(psi: CumulativePower, P_max: float | None = None) -> PowerAllocation:
    psi.validate(P_max)
    return PowerAllocation(p=_differences(psi.psi))


def _feasible(p: np.ndarray, P_max: float) -> np.ndarray:
    """Clean solver round-off: nonnegative, nonincreasing in k, slot totals within budget."""
    p = np.minimum.accumulate(np.maximum(p, 0.0), axis=0)
    totals = p.sum(axis=0)
    over = totals > P_max
    p[:, over] *= P_max / totals[over]
    return p


def power_surrogate(gains, psi, psi_point, sigma2: float) -> float:
    """Sum over users of the concave lower bound of the slot rate, numpy form."""
    gains = np.asarray(gains, dtype=float)
    psi = np.asarray(psi, dtype=float)
    psi_point = np.asarray(psi_point, dtype=float)
    nxt = np.append(psi[1:], 0.0)
    nxt0 = np.append(psi_point[1:], 0.0)
    denom0 = gains * nxt0 + sigma2
    value = (
        np.log2(gains * psi + sigma2)
        - np.log2(denom0)
        - LOG2E * gains / denom0 * (nxt - nxt0)
    )
    return float(np.sum(value))


def assemble_power_slot(gains, psi_point, scenario: Scenario) -> ConicProblem:
    """Concave program over one slot's psi (K,); gains are true |g|^2 in decoding order."""
    gains = np.asarray(gains, dtype=float)
    psi_point = np.asarray(psi_point, dtype=float)
    K = gains.shape[0]
    if psi_point.shape != (K,):
        raise ValueError(f"Expansion point has shape {psi_point.shape}, expected ({K},)")
    if np.any(gains < 0):
        raise ValueError("Gains must be nonnegative")
    snr = gains / scenario.sigma2

    prob = ConicProblem(name="power", sense="maximize")
    psi = prob.vector("psi", K, nonneg=True)
    nxt0 = np.append(psi_point[1:], 0.0)
    for k in range(K):
        if snr[k] == 0:
            continue
        prob.add_log_objective(snr[k] * psi[k] + 1.0, weight=1.0 / math.log(2))
        if k + 1 < K:
            prob.add_objective(-LOG2E * snr[k] / (snr[k] * nxt0[k] + 1.0) * psi[k + 1])
    prob.leq(psi[0], scenario.P_max, "budget")
    if K > 1:
        diffs = cp.hstack([psi[:-1] - psi[1:], psi[K - 1 : K]])
        prob.geq(diffs[:-1], diffs[1:], "power order")
    return prob


def optimize_power(
    scenario: Scenario,
    gains,
    init: PowerAllocation,
    settings: SolverSettings | None = None,
) -> tuple[PowerAllocation, SolveReport]:
    """Successive lower-bound maximization per slot until the slot rate gains less than
    ``power_delta``; slots run independently and keep their best iterate."""
    settings = settings or SolverSettings()
    gains = np.asarray(gains, dtype=float)
    K, N = scenario.K, scenario.N
    if gains.shape != (K, N) or init.p.shape != (K, N):
        raise ValueError(f"Gains and powers must have shape ({K}, {N})")

    if scenario.P_max == 0:
        report = SolveReport(name="power")
        return PowerAllocation(p=np.zeros((K, N))), report

    def run_slot(n: int) -> tuple[np.ndarray, SolveReport]:
        return _optimize_slot(scenario, gains[:, n], init.p[:, n], settings, n)

    results = map_ordered(run_slot, range(N), settings.workers, name="power")
    p = np.column_stack([r[0] for r in results])
    report = SolveReport.merge("power", [r[1] for r in results])
    log.info("Power: rate %.4f -> %.4f (%s)", report.rate_before, report.rate_after, report.status)
    return PowerAllocation(p=p), report


def _slot_rate(gains: np.ndarray, p: np.ndarray, sigma2: float) -> float:
    return float(np.sum(rates_from_gains(gains, p, sigma2)))


def _optimize_slot(
    scenario: Scenario, gains: np.ndarray, p0: np.ndarray, settings: SolverSettings, n: int
) -> tuple[np.ndarray, SolveReport]:
    sigma2 = scenario.sigma2
    base = _slot_rate(gains, p0, sigma2)
    report = SolveReport(name=f"power slot {n}", rate_before=base, objective_trace=[base])
    best, best_rate = p0.copy(), base
    psi_point = np.cumsum(p0[::-1])[::-1]
    prev = base

    for it in range(settings.power_max_iters):
        sol = solve(assemble_power_slot(gains, psi_point, scenario), settings)
        report.iterations = it + 1
        if not sol.optimal:
            if it == 0:
                report.rate_after = base
                if sol.status == "infeasible":
                    log.warning("Power slot %d: first subproblem infeasible", n)
                    report.set_status("failed")
                else:
                    report.flag(f"first subproblem returned {sol.status}, kept input")
                return p0.copy(), report
            report.flag(f"subproblem returned {sol.status} at iteration {it}")
            break
        p = _feasible(_differences(sol["psi"][:, None])[:, 0], scenario.P_max)
        rate = _slot_rate(gains, p, sigma2)
        report.objective_trace.append(rate)
        log.debug("Power slot %d iter %d: rate %.6f", n, it, rate)
        if rate > best_rate:
            best, best_rate = p, rate
        psi_point = np.cumsum(p[::-1])[::-1]
        if rate - prev < settings.power_delta:
            break
        prev = rate
    else:
        report.flag("iteration cap reached")

    report.rate_after = best_rate
    return best, report

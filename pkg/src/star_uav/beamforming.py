"""STAR-RIS beamforming: lifted SDP per slot with sequential rank-one constraint relaxation.

Each slot is an independent problem over the two lifted beamformers E_r, E_t
((M+1) x (M+1) Hermitian PSD). The rate of every user is lower-bounded through slack
variables A (inverse signal power) and B (interference plus noise) and a first-order
expansion of log2(1 + 1/(A B)); rank one is approached by the cut
e_max^H E e_max >= alpha Tr(E), alpha rising towards 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import cvxpy as cp
import numpy as np

from star_uav.channel import (
    ChannelSlot,
    FadingDraws,
    compute_channel_slot,
    rates_from_gains,
    slot_gains,
)
from star_uav.conic import ConicProblem, max_eigpair, solve
from star_uav.report import SolveReport
from star_uav.scenario import Scenario, Space
from star_uav.settings import SolverSettings
from star_uav.workers import map_ordered

log = logging.getLogger(__name__)

MODES = (Space.REFLECTION, Space.TRANSMISSION)
LOG2E = math.log2(math.e)
POWER_FLOOR = 1e-12
GAIN_FLOOR = 1e-12
TWO_PI = 2.0 * np.pi


def _wrap_phase(theta: np.ndarray) -> np.ndarray:
    theta = np.mod(theta, TWO_PI)
    theta[theta >= TWO_PI] = 0.0
    return theta


@dataclass
class BeamformingSchedule:
    """Per-slot amplitudes (beta, squared) and phases for both modes, shape (N, M, 2)."""

    beta: np.ndarray
    theta: np.ndarray

    @property
    def N(self) -> int:
        return self.beta.shape[0]

    @property
    def M(self) -> int:
        return self.beta.shape[1]

    @classmethod
    def uniform(cls, N: int, M: int) -> BeamformingSchedule:
        """Equal energy split, zero phases."""
        return cls(beta=np.full((N, M, 2), 0.5), theta=np.zeros((N, M, 2)))

    @classmethod
    def from_vectors(cls, u_r: np.ndarray, u_t: np.ndarray) -> BeamformingSchedule:
        """Inverse of ``vectors``: u = sqrt(beta) exp(-j theta), arrays of shape (N, M)."""
        u = np.stack([np.atleast_2d(u_r), np.atleast_2d(u_t)], axis=-1)
        return cls(beta=np.abs(u) ** 2, theta=_wrap_phase(-np.angle(u)))

    def vectors(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Beam vectors (u_r, u_t) of slot ``n``."""
        u = np.sqrt(self.beta[n]) * np.exp(-1j * self.theta[n])
        return u[:, 0], u[:, 1]

    def copy(self) -> BeamformingSchedule:
        return BeamformingSchedule(beta=self.beta.copy(), theta=self.theta.copy())

    def set_slot(self, n: int, u_r: np.ndarray, u_t: np.ndarray) -> None:
        slot = BeamformingSchedule.from_vectors(u_r[None, :], u_t[None, :])
        self.beta[n] = slot.beta[0]
        self.theta[n] = slot.theta[0]

    def validate(self, tol: float = 1e-9) -> BeamformingSchedule:
        if self.beta.shape != self.theta.shape or self.beta.ndim != 3 or self.beta.shape[2] != 2:
            raise ValueError(f"Invalid schedule shapes {self.beta.shape}, {self.theta.shape}")
        if np.any(self.beta < -tol) or np.any(self.beta > 1 + tol):
            raise ValueError("Invalid amplitudes: beta must lie in [0, 1]")
        if np.any(self.theta < 0) or np.any(self.theta >= TWO_PI):
            raise ValueError("Invalid phases: theta must lie in [0, 2pi)")
        if np.max(np.abs(self.beta.sum(axis=2) - 1.0)) > tol:
            raise ValueError("Invalid amplitudes: beta_r + beta_t must equal 1")
        return self


def lift(u) -> np.ndarray:
    """E = e e^H with e = [u; 1]."""
    e = np.append(np.asarray(u, dtype=complex), 1.0)
    return np.outer(e, e.conj())


def build_vkn(slot: ChannelSlot, k: int) -> np.ndarray:
    """V_kn = v^H v with v = [(g_k^rg)^H diag(g^ur), h_kn]; Tr(V lift(u)) = |g_kn|^2."""
    v = np.append(np.conj(slot.g_rg[k]) * slot.g_ur, slot.h_direct[k])
    return np.outer(v.conj(), v)


# --- SROCR state ---


@dataclass
class SrocrState:
    alpha: list[float]
    delta: float
    iteration: int = 0
    E: list[np.ndarray] = field(default_factory=list)
    e_max: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def start(cls, E: list[np.ndarray], delta: float, alpha0: float = 0.0) -> SrocrState:
        state = cls(alpha=[alpha0, alpha0], delta=delta, E=list(E))
        state.e_max = [max_eigpair(Ep)[1] for Ep in E]
        return state

    def refresh(self, E: list[np.ndarray]) -> None:
        """Adopt ``E`` (accepted or retained) and move alpha by the update rule."""
        self.E = list(E)
        self.alpha = [srocr_alpha_update(self, Ep) for Ep in E]
        self.e_max = [max_eigpair(Ep)[1] for Ep in E]
        self.iteration += 1


def rank_one_ratio(E: np.ndarray) -> float:
    trace = float(np.real(np.trace(E)))
    if trace <= 0:
        raise ValueError("Lifted matrix has non-positive trace")
    return max_eigpair(E)[0] / trace


def srocr_alpha_update(state: SrocrState, E_current: np.ndarray) -> float:
    """alpha = min(1, eps_max(E) / Tr(E) + delta), clamped to [0, 1]."""
    return float(min(1.0, max(0.0, rank_one_ratio(E_current) + state.delta)))


# --- Subproblem assembly ---


@dataclass(frozen=True)
class BeamSlotData:
    slot: ChannelSlot
    modes: np.ndarray
    sigma2: float
    fixed_beta_r: np.ndarray | None = None
    # per-pair floors on gain[k+1] - gain[k] (per-watt SNR) and the slack unit; None keeps
    # the strict chain
    order_floor: np.ndarray | None = None
    order_scale: float = 1.0
    order_penalty: float = 1e3

    def gain_matrices(self) -> list[np.ndarray]:
        """V_kn scaled by 1/sigma2 so that traces are per-watt SNRs."""
        return [build_vkn(self.slot, k) / self.sigma2 for k in range(self.slot.K)]


def expansion_point(
    data: BeamSlotData, powers: np.ndarray, E: list[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """True slack values A = 1/(p Tr(VE)), B = Tr(VE) sum_{i>k} p_i + 1 at ``E``."""
    V = data.gain_matrices()
    gains = np.array(
        [max(float(np.real(np.trace(V[k] @ E[data.modes[k]]))), GAIN_FLOOR) for k in range(len(V))]
    )
    tail = np.cumsum(powers[::-1])[::-1] - powers
    with np.errstate(divide="ignore"):
        A0 = np.where(powers > POWER_FLOOR, 1.0 / (np.maximum(powers, POWER_FLOOR) * gains), np.inf)
    B0 = tail * gains + 1.0
    return A0, B0


def taylor_rate_bound(A, B, A0: float, B0: float):
    """First-order expansion of log2(1 + 1/(A B)) at (A0, B0); works on floats and cvxpy."""
    c = A0 * B0
    return (
        math.log2(1.0 + 1.0 / c)
        - LOG2E * (A - A0) / (A0 * (1.0 + c))
        - LOG2E * (B - B0) / (B0 * (1.0 + c))
    )


def assemble_beamforming_slot(
    data: BeamSlotData,
    powers,
    srocr: SrocrState,
    A0,
    B0,
) -> ConicProblem:
    """Convex per-slot problem over E_r, E_t and the rate slacks A, B, R (and ordering slack s)."""
    slot = data.slot
    M, K = slot.M, slot.K
    powers = np.asarray(powers, dtype=float)
    A0 = np.asarray(A0, dtype=float)
    B0 = np.asarray(B0, dtype=float)
    if powers.shape != (K,) or A0.shape != (K,) or B0.shape != (K,):
        raise ValueError(
            f"Expansion points and powers must have shape ({K},), got "
            f"{powers.shape}, {A0.shape}, {B0.shape}"
        )
    active = np.flatnonzero(powers > POWER_FLOOR)
    if np.any(~(A0[active] > 0)) or np.any(~np.isfinite(A0[active])) or np.any(~(B0 > 0)):
        raise ValueError("Expansion points must be finite and strictly positive")

    prob = ConicProblem(name="beamforming", sense="maximize")
    E = [prob.hermitian_psd("E_r", M + 1), prob.hermitian_psd("E_t", M + 1)]
    V = data.gain_matrices()
    gain = [E[data.modes[k]].inner(V[k]) for k in range(K)]
    tail = np.cumsum(powers[::-1])[::-1] - powers

    for p, mode in enumerate(MODES):
        prob.eq(E[p].re[M, M], 1.0, f"corner {mode.value}")
    diag_r = cp.diag(E[0].re)[:M]
    diag_t = cp.diag(E[1].re)[:M]
    if data.fixed_beta_r is None:
        prob.eq(diag_r + diag_t, np.ones(M), "energy conservation")
    else:
        fixed = np.asarray(data.fixed_beta_r, dtype=float)
        prob.eq(diag_r, fixed, "fixed reflection amplitudes")
        prob.eq(diag_t, 1.0 - fixed, "fixed transmission amplitudes")

    for p, mode in enumerate(MODES):
        e = srocr.e_max[p]
        prob.geq(
            E[p].inner(np.outer(e, e.conj())),
            srocr.alpha[p] * E[p].trace(),
            f"srocr {mode.value}",
        )

    if active.size:
        A = prob.vector("A", active.size, nonneg=True)
        B = prob.vector("B", active.size, nonneg=True)
        R = prob.vector("R", active.size)
        for j, k in enumerate(active):
            prob.leq(R[j], taylor_rate_bound(A[j], B[j], A0[k], B0[k]), f"rate bound {k}")
            prob.rotated_soc(A[j], powers[k] * gain[k], 1.0, f"signal {k}")
            prob.geq(B[j], tail[k] * gain[k] + 1.0, f"interference {k}")
        prob.add_objective(cp.sum(R))

    if K > 1:
        floor = np.zeros(K - 1)
        slack = 0.0
        if data.order_floor is not None:
            floor = np.asarray(data.order_floor, dtype=float)
            slack = prob.scalar("s", nonneg=True)
            prob.add_objective(-data.order_penalty * slack)
        for k in range(K - 1):
            prob.geq(
                gain[k + 1],
                gain[k] + floor[k] - data.order_scale * slack,
                f"decoding order {k}",
            )
    return prob


# --- Rank-one recovery ---


def extract_rank_one(
    E_r: np.ndarray, E_t: np.ndarray, fixed_beta_r: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Beam vectors from the dominant eigenpairs, with amplitudes clipped and each element's
    (beta_r, beta_t) renormalized to sum to one."""
    us = []
    for E in (E_r, E_t):
        eps, vec = max_eigpair(E)
        e = math.sqrt(max(eps, 0.0)) * vec
        if abs(e[-1]) > 1e-9:
            e = e / e[-1]
        us.append(e[:-1])
    amp = [np.clip(np.abs(u), 0.0, 1.0) for u in us]
    phase = [np.angle(u) for u in us]
    beta_r, beta_t = amp[0] ** 2, amp[1] ** 2
    total = beta_r + beta_t
    share = np.where(total > 0, beta_r / np.where(total > 0, total, 1.0), 0.5)
    if fixed_beta_r is not None:
        share = np.asarray(fixed_beta_r, dtype=float).copy()
    beta_r = share
    beta_t = 1.0 - share
    u_r = np.sqrt(beta_r) * np.exp(1j * phase[0])
    u_t = np.sqrt(beta_t) * np.exp(1j * phase[1])
    return u_r, u_t


# --- Per-slot loop ---


@dataclass
class SlotBeamResult:
    u_r: np.ndarray
    u_t: np.ndarray
    report: SolveReport
    alpha_trace: list[list[float]] = field(default_factory=list)
    relaxed_objective: float = float("nan")


def _slot_rate(data: BeamSlotData, powers, u_r, u_t) -> tuple[float, np.ndarray]:
    gains = slot_gains(data.slot, u_r, u_t, data.modes)
    return float(np.sum(rates_from_gains(gains, powers, data.sigma2))), gains


def _chain_holds(gains: np.ndarray, tol: float) -> bool:
    return bool(np.all(np.diff(gains) >= -tol * max(1.0, float(np.max(np.abs(gains))))))


def chain_violation(gains: np.ndarray) -> float:
    """Largest amount by which a user's gain exceeds the next one's in decoding order."""
    if gains.size < 2:
        return 0.0
    return float(max(0.0, -np.min(np.diff(gains))))


def optimize_beamforming_slot(
    data: BeamSlotData,
    powers,
    u_init: tuple[np.ndarray, np.ndarray],
    settings: SolverSettings,
    *,
    alpha0: float = 0.0,
    label: str = "slot",
) -> SlotBeamResult:
    """SROCR loop on one slot, then rank-one extraction."""
    powers = np.asarray(powers, dtype=float)
    u_r0, u_t0 = (np.asarray(u, dtype=complex) for u in u_init)
    init_rate, init_gains = _slot_rate(data, powers, u_r0, u_t0)
    report = SolveReport(name=f"beamforming {label}", rate_before=init_rate)

    # a chain already broken at the start may not get worse than it started
    scaled = init_gains / data.sigma2
    order_scale = max(1.0, float(np.max(np.abs(scaled))))
    if data.slot.K > 1 and not _chain_holds(scaled, settings.feas_tol):
        data = replace(
            data,
            order_floor=np.minimum(np.diff(scaled), 0.0),
            order_scale=order_scale,
            order_penalty=settings.order_penalty,
        )
        log.debug("%s: decoding order violated at start, holding each gap at its start", label)

    E = [lift(u_r0), lift(u_t0)]
    state = SrocrState.start(E, settings.srocr_delta0, alpha0)
    result = SlotBeamResult(u_r=u_r0, u_t=u_t0, report=report)
    report.objective_trace.append(init_rate)
    slack_value = 0.0
    accepted = 0

    for it in range(settings.beam_max_iters):
        A0, B0 = expansion_point(data, powers, state.E)
        problem = assemble_beamforming_slot(data, powers, state, A0, B0)
        sol = solve(problem, settings)
        report.iterations = it + 1
        if sol.optimal:
            accepted += 1
            E = [sol["E_r"], sol["E_t"]]
            objective = float(np.sum(sol["R"])) if "R" in sol.values else 0.0
            slack_value = float(sol["s"]) if "s" in sol.values else 0.0
            report.objective_trace.append(objective)
            log.debug(
                "%s iter %d: objective %.6f alpha %s", label, it, objective, state.alpha
            )
        elif accepted == 0 and it == 0:
            report.rate_after = init_rate
            if sol.status == "infeasible":
                log.warning("%s: first relaxed SDP infeasible, keeping input", label)
                report.set_status("failed")
            else:
                report.flag(f"{label}: first relaxed SDP returned {sol.status}, kept input")
            return result
        else:
            state.delta /= 2.0
            log.debug("%s iter %d: %s, halving step to %.3g", label, it, sol.status, state.delta)
            E = state.E

        state.refresh(E)
        result.alpha_trace.append(list(state.alpha))

        trace = report.objective_trace
        objective_settled = len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= (
            settings.beam_obj_tol * max(1.0, abs(trace[-2]))
        )
        rank_settled = all(abs(1.0 - a) <= settings.srocr_upsilon for a in state.alpha)
        if rank_settled and objective_settled:
            break
        if state.delta < 1e-10:
            report.flag(f"{label}: SROCR step size collapsed")
            break
    else:
        report.flag(f"{label}: SROCR iteration cap reached")

    result.relaxed_objective = report.objective_trace[-1]
    u_r, u_t = extract_rank_one(state.E[0], state.E[1], data.fixed_beta_r)
    rate, gains = _slot_rate(data, powers, u_r, u_t)

    if data.order_floor is not None and slack_value > settings.feas_tol:
        report.flag(f"{label}: decoding-order slack {slack_value:.3g} left at termination")
    if rate < (1.0 - settings.extraction_slack) * result.relaxed_objective:
        report.flag(
            f"{label}: rank-one extraction lost {result.relaxed_objective - rate:.4g} "
            "bits/s/Hz against the relaxed objective"
        )
    if rate < init_rate:
        log.info(
            "%s: extracted beams rate %.6f below input %.6f, keeping input", label, rate, init_rate
        )
        report.rate_after = init_rate
        return result
    if data.slot.K > 1 and not _chain_holds(gains / data.sigma2, settings.feas_tol):
        worse = chain_violation(gains / data.sigma2) - chain_violation(scaled)
        if data.order_floor is None or worse > settings.extraction_slack * order_scale:
            log.info("%s: extracted beams break the decoding order, keeping input", label)
            report.rate_after = init_rate
            return result
        report.flag(f"{label}: decoding order not satisfied, no worse than at the start")

    result.u_r, result.u_t = u_r, u_t
    report.rate_after = rate
    return result


def optimize_beamforming(
    scenario: Scenario,
    fading: FadingDraws,
    trajectory,
    power,
    init: BeamformingSchedule,
    settings: SolverSettings | None = None,
    *,
    fixed_beta_r: np.ndarray | None = None,
    alpha0: float = 0.0,
) -> tuple[BeamformingSchedule, SolveReport]:
    """SROCR on every slot independently; slots merged in index order."""
    settings = settings or SolverSettings()
    modes = scenario.user_modes
    fixed = None
    if fixed_beta_r is not None:
        fixed = np.broadcast_to(np.asarray(fixed_beta_r, dtype=float), (scenario.N, scenario.M))

    def run_slot(n: int) -> SlotBeamResult:
        slot = compute_channel_slot(scenario, fading, trajectory.q[n], n)
        data = BeamSlotData(
            slot=slot,
            modes=modes,
            sigma2=scenario.sigma2,
            fixed_beta_r=None if fixed is None else fixed[n],
            order_penalty=settings.order_penalty,
        )
        return optimize_beamforming_slot(
            data, power.p[:, n], init.vectors(n), settings, alpha0=alpha0, label=f"slot {n}"
        )

    results = map_ordered(run_slot, range(scenario.N), settings.workers, name="beam")
    schedule = init.copy()
    for n, res in enumerate(results):
        schedule.set_slot(n, res.u_r, res.u_t)
    if fixed is not None:
        schedule.beta[:, :, 0] = fixed
        schedule.beta[:, :, 1] = 1.0 - fixed
    report = SolveReport.merge("beamforming", [r.report for r in results])
    log.info(
        "Beamforming: rate %.4f -> %.4f (%s)", report.rate_before, report.rate_after, report.status
    )
    return schedule, report

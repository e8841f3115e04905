"""UAV trajectory optimization for fixed beams and powers.

Under phase alignment at the users the combined gain splits into a surface-only
term over d_surface^o2, a cross term over d_surface^(o2/2) d_user^(o1/2) and a
direct term over d_user^o1, with d_surface the UAV-surface and d_user the UAV-user
distance. Slack distances bounded below by the true ones and first-order expansions
around the previous waypoints give a convex problem per iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from star_uav.channel import FadingDraws, steering, sum_rate, surface_user_distances
from star_uav.conic import ConicProblem, solve
from star_uav.report import SolveReport
from star_uav.scenario import Scenario
from star_uav.settings import SolverSettings

log = logging.getLogger(__name__)

# solver length unit in meters; keeps squared distances O(10) inside the conic problem
LENGTH_UNIT = 100.0


@dataclass
class Trajectory:
    """Waypoints q[0..N] (meters); slot n flies at q[n]."""

    q: np.ndarray

    @property
    def N(self) -> int:
        return self.q.shape[0] - 1

    @classmethod
    def straight_line(cls, scenario: Scenario) -> Trajectory:
        """N equal steps from q_start to q_end."""
        q = np.linspace(scenario.q_start, scenario.q_end, scenario.N + 1)
        return cls(q=np.asarray(q, dtype=float))

    def copy(self) -> Trajectory:
        return Trajectory(q=self.q.copy())

    def step_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.q, axis=0), axis=1)

    def min_distance_to(self, point) -> float:
        """Smallest horizontal distance from any slot waypoint to ``point``."""
        return float(np.min(np.linalg.norm(self.q[: self.N] - np.asarray(point), axis=1)))

    def validate(self, scenario: Scenario, tol: float = 1e-6) -> Trajectory:
        if self.q.shape != (scenario.N + 1, 2):
            raise ValueError(
                f"Invalid trajectory shape {self.q.shape}, expected ({scenario.N + 1}, 2)"
            )
        if not np.all(np.isfinite(self.q)):
            raise ValueError("Invalid trajectory: non-finite waypoint")
        if np.max(np.abs(self.q[0] - scenario.q_start)) > tol or np.max(
            np.abs(self.q[-1] - scenario.q_end)
        ) > tol:
            raise ValueError("Invalid trajectory: endpoints do not match q_start / q_end")
        if self.N and np.max(self.step_lengths()) > scenario.D + tol * max(1.0, scenario.D):
            raise ValueError(f"Invalid trajectory: a step exceeds D = {scenario.D}")
        return self


@dataclass(frozen=True)
class GainConstants:
    """Distance-free parts of the phase-aligned gain, each (K, N)."""

    cascade: np.ndarray  # surface-only term
    cross: np.ndarray  # direct x cascade term, may be negative
    direct: np.ndarray  # direct-link term
    o1: float
    o2: float


@dataclass(frozen=True)
class ScaPoint:
    """Slack distances at the current expansion point, meters: UAV-surface (N,) and
    UAV-user (K, N)."""

    d_surface: np.ndarray
    d_user: np.ndarray

    @classmethod
    def from_trajectory(cls, scenario: Scenario, trajectory: Trajectory) -> ScaPoint:
        """Exact distances of ``trajectory`` (the tight choice of slacks)."""
        q = trajectory.q[: scenario.N]
        d_surface = np.sqrt(
            (scenario.H - scenario.z_R) ** 2
            + np.sum((q - scenario.surface_position) ** 2, axis=1)
        )
        offsets = q[None, :, :] - scenario.user_positions[:, None, :]
        d_user = np.sqrt(scenario.H**2 + np.sum(offsets**2, axis=2))
        return cls(d_surface=d_surface, d_user=d_user)


@dataclass(frozen=True)
class TaylorCoefficients:
    rate_slope: np.ndarray  # d rate / d gain
    surface_slope: np.ndarray  # -d gain / d d_surface
    user_slope: np.ndarray  # -d gain / d d_user
    gain: np.ndarray  # phase-aligned gain at the expansion point



def gain_constants(
    scenario: Scenario, fading: FadingDraws, beams, trajectory_prev: Trajectory
) -> GainConstants:
    """Distance-free gain terms with the UAV-surface steering frozen at ``trajectory_prev``."""
    K, N = scenario.K, scenario.N
    modes = scenario.user_modes
    d_rg = surface_user_distances(scenario)
    xi = scenario.xi
    x_R = scenario.surface_position[0]
    cascade = np.empty((K, N))
    cross = np.empty((K, N))
    for n in range(N):
        q_n = trajectory_prev.q[n]
        d_ur = math.sqrt(
            (scenario.H - scenario.z_R) ** 2 + float(np.sum((q_n - scenario.surface_position) ** 2))
        )
        theta = steering(scenario.M, scenario.d_over_lambda, (x_R - q_n[0]) / d_ur)
        for k in range(K):
            amp = np.sqrt(beams.beta[n, :, modes[k]])
            x = np.vdot(theta, amp)  # theta^H sqrt(beta)
            cascade[k, n] = xi**2 / d_rg[k] ** scenario.o3 * abs(x) ** 2
            cross[k, n] = (
                2.0
                * xi**1.5
                / d_rg[k] ** (scenario.o3 / 2)
                * float(np.real(x * np.conj(fading.h_tilde[k, n])))
            )
    direct = xi * np.abs(fading.h_tilde) ** 2
    return GainConstants(
        cascade=cascade,
        cross=cross,
        direct=np.asarray(direct, dtype=float),
        o1=scenario.o1,
        o2=scenario.o2,
    )


def aligned_gains(constants: GainConstants, d_surface, d_user) -> np.ndarray:
    """Phase-aligned gains (K, N) at UAV-surface distances (N,) and UAV-user distances (K, N)."""
    ds = np.asarray(d_surface, dtype=float)[None, :]
    du = np.asarray(d_user, dtype=float)
    o1, o2 = constants.o1, constants.o2
    return (
        constants.cascade / ds**o2
        + constants.cross / (ds ** (o2 / 2) * du ** (o1 / 2))
        + constants.direct / du**o1
    )


def aligned_rates(gains: np.ndarray, p: np.ndarray, sigma2: float) -> np.ndarray:
    """NOMA rates (K, N) for gains and powers, both (K, N)."""
    gains = np.maximum(gains, 0.0)
    tail = np.cumsum(p[::-1], axis=0)[::-1] - p
    return np.log2(1.0 + p * gains / (tail * gains + sigma2))


def taylor_coefficients(
    constants: GainConstants,
    sca_point: ScaPoint,
    power,
    sigma2: float,
    min_distance: float = 1.0,
) -> TaylorCoefficients:
    """First-order coefficients of the rate and of the gain around ``sca_point``."""
    # floored at min_distance
    ds = np.maximum(np.asarray(sca_point.d_surface, dtype=float), min_distance)
    du = np.maximum(np.asarray(sca_point.d_user, dtype=float), min_distance)
    o1, o2 = constants.o1, constants.o2
    p = np.asarray(power.p, dtype=float)
    gain = aligned_gains(constants, ds, du)
    tail = np.cumsum(p[::-1], axis=0)[::-1] - p
    # denominator multiplied through by gain^2 so a zero gain stays finite
    rate_slope = p * sigma2 / math.log(2) / ((tail * gain + sigma2) * ((tail + p) * gain + sigma2))
    ds = ds[None, :]
    surface_slope = o2 * constants.cascade / ds ** (o2 + 1) + (o2 / 2) * constants.cross / (
        ds ** (o2 / 2 + 1) * du ** (o1 / 2)
    )
    user_slope = o1 * constants.direct / du ** (o1 + 1) + (o1 / 2) * constants.cross / (
        ds ** (o2 / 2) * du ** (o1 / 2 + 1)
    )
    return TaylorCoefficients(
        rate_slope=rate_slope, surface_slope=surface_slope, user_slope=user_slope, gain=gain
    )


def assemble_trajectory_problem(
    scenario: Scenario,
    constants: GainConstants,
    coefficients: TaylorCoefficients,
    sca_point: ScaPoint,
    power,
    *,
    w_weighted: bool = False,
    order_floor: np.ndarray | None = None,
    order_scale: float = 1.0,
    order_penalty: float = 1e3,
) -> ConicProblem:
    """Convex problem over waypoints ``q`` and slack distances ``d_surface``, ``d_user``.

    Lengths inside the problem are in LENGTH_UNIT, gains in units of sigma2. The default
    objective weighs the slack distances by the gain slopes alone; ``w_weighted``
    multiplies them by the rate slope first. ``order_floor`` (K-1, N) lowers the decoding-order
    chain to the given gaps, with a penalized slack in units of ``order_scale`` on top.
    """
    N, K = scenario.N, scenario.K
    u = LENGTH_UNIT
    sigma2 = scenario.sigma2
    for name in ("rate_slope", "surface_slope", "user_slope", "gain"):
        if not np.all(np.isfinite(getattr(coefficients, name))):
            raise ValueError(f"Non-finite expansion coefficient {name}")

    prob = ConicProblem(name="trajectory", sense="maximize")
    q = prob.matrix("q", N + 1, 2)
    ds = prob.vector("d_surface", N, nonneg=True)
    du = prob.matrix("d_user", K, N)

    prob.eq(q[0], np.asarray(scenario.q_start) / u, "start")
    prob.eq(q[N], np.asarray(scenario.q_end) / u, "end")
    prob.leq(cp.norm(q[1:] - q[:-1], 2, axis=1), scenario.D / u, "mobility")

    ds0 = sca_point.d_surface / u
    du0 = sca_point.d_user / u
    surface = np.tile(scenario.surface_position / u, (N, 1))
    prob.leq(
        cp.sum(cp.square(q[:N] - surface), axis=1)
        + ((scenario.H - scenario.z_R) / u) ** 2
        + ds0**2
        - 2 * cp.multiply(ds0, ds),
        0.0,
        "surface distance",
    )
    users = scenario.user_positions / u
    for k in range(K):
        prob.leq(
            cp.sum(cp.square(q[:N] - np.tile(users[k], (N, 1))), axis=1)
            + (scenario.H / u) ** 2
            + du0[k] ** 2
            - 2 * cp.multiply(du0[k], du[k]),
            0.0,
            f"user distance {k}",
        )

    cs = coefficients.surface_slope * u / sigma2
    cu = coefficients.user_slope * u / sigma2
    if w_weighted:
        ws = coefficients.rate_slope * coefficients.surface_slope * u
        wu = coefficients.rate_slope * coefficients.user_slope * u
    else:
        ws, wu = cs, cu
    s_weight = np.maximum(ws.sum(axis=0), 0.0)
    u_weight = np.maximum(wu, 0.0)
    # keeps slacks on their true distances where a weight vanishes
    positive = np.concatenate([s_weight[s_weight > 0], u_weight[u_weight > 0].ravel()])
    eps = 1e-6 * (float(np.mean(positive)) if positive.size else 1.0)
    prob.add_objective(-((s_weight + eps) @ ds) - cp.sum(cp.multiply(u_weight + eps, du)))

    if K > 1:
        gain0 = coefficients.gain / sigma2
        linear_gain = [
            gain0[k] - cp.multiply(cs[k], ds - ds0) - cp.multiply(cu[k], du[k] - du0[k])
            for k in range(K)
        ]
        floor = np.zeros((K - 1, N))
        slack = 0.0
        if order_floor is not None:
            floor = np.asarray(order_floor, dtype=float)
            slack = prob.scalar("s", nonneg=True)
            prob.add_objective(-order_penalty * slack)
        for k in range(K - 1):
            prob.geq(
                linear_gain[k + 1],
                linear_gain[k] + floor[k] - order_scale * slack,
                f"decoding order {k}",
            )
    return prob


def _pinned(q: np.ndarray, scenario: Scenario) -> np.ndarray:
    q = np.array(q, dtype=float)
    q[0] = scenario.q_start
    q[-1] = scenario.q_end
    return q


def aligned_sum_rate(
    scenario: Scenario, constants: GainConstants, trajectory: Trajectory, power
) -> float:
    """Phase-aligned sum rate at the exact distances of ``trajectory``."""
    point = ScaPoint.from_trajectory(scenario, trajectory)
    gains = aligned_gains(constants, point.d_surface, point.d_user)
    return float(np.sum(aligned_rates(gains, np.asarray(power.p, dtype=float), scenario.sigma2)))


def optimize_trajectory(
    scenario: Scenario,
    fading: FadingDraws,
    beams,
    power,
    init: Trajectory,
    settings: SolverSettings | None = None,
) -> tuple[Trajectory, SolveReport]:
    """Successive convex approximation over the waypoints until the phase-aligned rate
    gains less than ``traj_delta``; returns the best iterate by true sum rate."""
    settings = settings or SolverSettings()
    traj = init.copy()
    base = sum_rate(scenario, fading, traj, beams, power).total
    report = SolveReport(name="trajectory", rate_before=base)
    best, best_rate = traj, base
    if scenario.D == 0:
        # hovering: the only feasible trajectory is the input
        report.rate_after = base
        report.objective_trace.append(base)
        return best, report

    constants = gain_constants(scenario, fading, beams, traj)
    prev = aligned_sum_rate(scenario, constants, traj, power)
    report.objective_trace.append(prev)
    slack_value = 0.0

    for it in range(settings.traj_max_iters):
        if it:
            constants = gain_constants(scenario, fading, beams, traj)
        point = ScaPoint.from_trajectory(scenario, traj)
        coeffs = taylor_coefficients(
            constants, point, power, scenario.sigma2, settings.min_distance
        )
        scaled = coeffs.gain / scenario.sigma2
        gaps = np.diff(scaled, axis=0)
        order_scale = max(1.0, float(np.max(np.abs(scaled))))
        order_floor = None
        if scenario.K > 1 and np.any(gaps < -settings.feas_tol * order_scale):
            # a broken chain may not get worse than at the expansion point
            order_floor = np.minimum(gaps, 0.0)
        problem = assemble_trajectory_problem(
            scenario,
            constants,
            coeffs,
            point,
            power,
            w_weighted=settings.traj_w_weighted,
            order_floor=order_floor,
            order_scale=order_scale,
            order_penalty=settings.order_penalty,
        )
        sol = solve(problem, settings)
        report.iterations = it + 1
        if not sol.optimal:
            if it == 0:
                report.rate_after = base
                if sol.status == "infeasible":
                    log.warning("Trajectory: first SCA subproblem infeasible, keeping input")
                    report.set_status("failed")
                else:
                    report.flag(f"first SCA subproblem returned {sol.status}, kept input")
                return init, report
            report.flag(f"SCA subproblem returned {sol.status} at iteration {it}")
            break

        slack_value = float(sol["s"]) if "s" in sol.values else 0.0
        candidate = Trajectory(q=_pinned(sol["q"] * LENGTH_UNIT, scenario))
        aligned = aligned_sum_rate(scenario, constants, candidate, power)
        report.objective_trace.append(aligned)
        true_rate = sum_rate(scenario, fading, candidate, beams, power).total
        log.debug("Trajectory iter %d: aligned %.6f true %.6f", it, aligned, true_rate)
        if true_rate > best_rate:
            best, best_rate = candidate, true_rate
        traj = candidate
        if aligned - prev < settings.traj_delta:
            break
        prev = aligned
    else:
        report.flag("SCA iteration cap reached")

    if slack_value > settings.feas_tol:
        report.flag(f"decoding-order slack {slack_value:.3g} left at termination")
    report.rate_after = best_rate
    log.info("Trajectory: rate %.4f -> %.4f (%s)", base, best_rate, report.status)
    return best, report

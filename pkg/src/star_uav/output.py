"""Result files: CSV tables, run manifest, resolved scenario. All writes are atomic."""

from __future__ import annotations

import csv
import fcntl
import io
import json
import logging
from pathlib import Path

import numpy as np

from star_uav import __version__
from star_uav.channel import FadingDraws, sum_rate
from star_uav.driver import JointSolution
from star_uav.scenario import Scenario, Space, format_scenario, parse_scenario
from star_uav.settings import SolverSettings

log = logging.getLogger(__name__)

METHODS = ("es", "ms", "conventional")
SPACES = (Space.REFLECTION, Space.TRANSMISSION)

SOLUTION_HEADER = ("n", "x", "y")
RATES_HEADER = ("n", "k", "space", "rate")
BEAMS_HEADER = ("n", "m", "beta_r", "theta_r", "beta_t", "theta_t")
TRACE_HEADER = ("iteration", "sum_rate")
SWEEP_HEADER = ("M", "method", "sum_rate")
SPLIT_HEADER = ("n", "mean_beta_r", "mean_beta_t")


def fmt(value: float) -> str:
    return f"{float(value):.9g}"


# --- Atomic writes ---


def write_atomic(path: str | Path, text: str) -> Path:
    """Write ``text`` to ``path`` via a temporary file and rename, under an exclusive lock."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lock = path.parent / ".write.lock"
    with open(lock, "w") as lf:
        fcntl.flock(lf, fcntl.LOCK_EX)
        try:
            tmp = path.with_suffix(path.suffix + ".tmp")
            tmp.write_text(text)
            tmp.replace(path)
        finally:
            fcntl.flock(lf, fcntl.LOCK_UN)
    return path


def write_csv(path: str | Path, header, rows) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return write_atomic(path, buf.getvalue())


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# --- Manifest ---


def build_manifest(scenario: Scenario, settings: SolverSettings, method: str) -> dict:
    """Everything that determines a run's outputs."""
    if method not in METHODS:
        raise ValueError(f"Invalid method {method!r}, must be one of {METHODS}")
    return {
        "version": __version__,
        "method": method,
        "seed": scenario.seed,
        "scenario": format_scenario(scenario),
        "settings": settings.to_dict(),
    }


def write_manifest(path: str | Path, manifest: dict) -> Path:
    return write_atomic(path, json.dumps(manifest, indent=2) + "\n")


def load_manifest(path: str | Path) -> tuple[Scenario, SolverSettings, str]:
    """Scenario, settings and method recorded by ``write_manifest``."""
    data = json.loads(Path(path).read_text())
    for key in ("scenario", "settings", "method"):
        if key not in data:
            raise ValueError(f"Invalid manifest {path}: missing {key!r}")
    if data.get("version") != __version__:
        log.warning("Manifest written by version %s, running %s", data.get("version"), __version__)
    scenario = parse_scenario(data["scenario"])
    return scenario, SolverSettings.from_dict(data["settings"]), data["method"]


# --- Run outputs ---


def solution_rows(solution: JointSolution):
    for n, (x, y) in enumerate(solution.trajectory.q):
        yield n, fmt(x), fmt(y)


def rate_rows(scenario: Scenario, rates: np.ndarray):
    modes = scenario.user_modes
    for n in range(rates.shape[1]):
        for k in range(rates.shape[0]):
            yield n, k, SPACES[modes[k]].value, fmt(rates[k, n])


def beam_rows(solution: JointSolution):
    beta, theta = solution.beams.beta, solution.beams.theta
    for n in range(beta.shape[0]):
        for m in range(beta.shape[1]):
            yield (
                n,
                m,
                fmt(beta[n, m, 0]),
                fmt(theta[n, m, 0]),
                fmt(beta[n, m, 1]),
                fmt(theta[n, m, 1]),
            )


def trace_rows(solution: JointSolution):
    for iteration, rate in solution.rate_trace:
        yield iteration, fmt(rate)


def write_run_outputs(
    out_dir: str | Path,
    scenario: Scenario,
    fading: FadingDraws,
    solution: JointSolution,
    settings: SolverSettings,
    method: str,
) -> Path:
    """The full output set of one run: four CSVs, the manifest and the resolved scenario."""
    out = Path(out_dir)
    report = sum_rate(scenario, fading, solution.trajectory, solution.beams, solution.power)
    write_csv(out / "solution.csv", SOLUTION_HEADER, solution_rows(solution))
    write_csv(out / "rates.csv", RATES_HEADER, rate_rows(scenario, report.rates))
    write_csv(out / "beams.csv", BEAMS_HEADER, beam_rows(solution))
    write_csv(out / "trace.csv", TRACE_HEADER, trace_rows(solution))
    write_manifest(out / "manifest.json", build_manifest(scenario, settings, method))
    write_atomic(out / "scenario.resolved.txt", format_scenario(scenario))
    log.info("Wrote run outputs to %s (sum rate %s)", out, fmt(report.total))
    return out


def write_sweep(path: str | Path, rows: list[tuple[int, str, float]]) -> Path:
    return write_csv(path, SWEEP_HEADER, ((M, method, fmt(rate)) for M, method, rate in rows))


def write_splitting_profile(path: str | Path, split: np.ndarray) -> Path:
    return write_csv(
        path, SPLIT_HEADER, ((n, fmt(r), fmt(t)) for n, (r, t) in enumerate(split))
    )

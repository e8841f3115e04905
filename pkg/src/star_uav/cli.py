"""Command-line experiments: single runs, element-count sweeps, energy-splitting profile."""

from __future__ import annotations

import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from star_uav.baselines import compare_schemes, conventional_ris, mode_selection
from star_uav.channel import FadingDraws, sample_fading
from star_uav.conic import ConicError
from star_uav.driver import JointSolution, run
from star_uav.output import (
    METHODS,
    load_manifest,
    write_run_outputs,
    write_splitting_profile,
    write_sweep,
)
from star_uav.scenario import Scenario, ScenarioError, load_scenario
from star_uav.settings import SolverSettings
from star_uav.workers import map_ordered

log = logging.getLogger(__name__)

EXIT_SCENARIO = 1
EXIT_SOLVER = 2

SCENARIO_FILE = click.Path(exists=True, dir_okay=False)


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load(path: str, seed_override: int | None) -> Scenario:
    scenario = load_scenario(path)
    if seed_override is not None:
        scenario = replace(scenario, seed=seed_override).validate()
    return scenario


def solve_method(
    scenario: Scenario,
    method: str,
    settings: SolverSettings,
    fading: FadingDraws,
) -> JointSolution:
    """Run one scheme on fixed fading draws."""
    if method == "es":
        return run(scenario, settings, fading=fading)
    if method == "conventional":
        return conventional_ris(scenario, settings, fading=fading)
    if method == "ms":
        return mode_selection(scenario, settings, fading=fading)
    raise ValueError(f"Invalid method {method!r}, must be one of {METHODS}")


def _parse_m_list(raw: str) -> list[int]:
    try:
        values = [int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {raw!r}") from None
    if not values:
        raise click.BadParameter("empty element list")
    return values


@click.group()
@click.option(
    "--log-level",
    default="INFO",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    show_default=True,
)
def main(log_level: str) -> None:
    """Joint STAR-RIS beamforming, UAV trajectory and NOMA power optimization."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(asctime)s %(levelname)-8s %(name)s: %(message)s",
    )
    logging.getLogger("cvxpy").setLevel(logging.WARNING)


@main.command("run")
@click.option("--scenario", "scenario_path", type=SCENARIO_FILE)
@click.option("--manifest", "manifest_path", type=SCENARIO_FILE)
@click.option("--method", type=click.Choice(METHODS), default=None, help="default: es")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed-override", type=int, default=None)
def cmd_run(
    scenario_path: str | None,
    manifest_path: str | None,
    method: str | None,
    out_dir: str,
    seed_override: int | None,
) -> None:
    """Optimize one scenario and write solution, rates, beams, trace and manifest."""
    if (scenario_path is None) == (manifest_path is None):
        raise click.UsageError("give exactly one of --scenario or --manifest")
    try:
        if manifest_path:
            scenario, settings, recorded = load_manifest(manifest_path)
            method = method or recorded
            if seed_override is not None:
                scenario = replace(scenario, seed=seed_override).validate()
        else:
            scenario = _load(scenario_path, seed_override)
            settings = SolverSettings.from_env()
            method = method or "es"
        if method == "conventional" and scenario.M % 2:
            raise ScenarioError(f"Conventional RIS needs an even M, got {scenario.M}", "M even")
    except ValueError as exc:
        # ScenarioError and malformed manifests
        _fail(str(exc), EXIT_SCENARIO)

    fading = sample_fading(scenario)
    try:
        solution = solve_method(scenario, method, settings, fading)
    except ConicError as exc:
        _fail(f"solver failure: {exc}", EXIT_SOLVER)
    write_run_outputs(out_dir, scenario, fading, solution, settings, method)
    click.echo(f"{method}: sum rate {solution.sum_rate:.6f} bits/s/Hz ({solution.status})")
    if solution.status == "failed":
        _fail("a subproblem failed; outputs hold the last usable iterate", EXIT_SOLVER)


@main.command("sweep-elements")
@click.option("--scenario", "scenario_path", type=SCENARIO_FILE, required=True)
@click.option("--m-list", default="8,12,16", show_default=True)
@click.option("--methods", default="es,ms,conventional", show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed-override", type=int, default=None)
@click.option("--workers", type=int, default=1, show_default=True, help="sweep points in parallel")
def cmd_sweep_elements(
    scenario_path: str,
    m_list: str,
    methods: str,
    out_dir: str,
    seed_override: int | None,
    workers: int,
) -> None:
    """Final sum rate per (M, method) on paired fading draws."""
    M_values = _parse_m_list(m_list)
    method_list = [m.strip() for m in methods.split(",") if m.strip()]
    unknown = [m for m in method_list if m not in METHODS]
    if unknown:
        raise click.BadParameter(f"unknown methods {unknown}; choose from {METHODS}")
    try:
        base = _load(scenario_path, seed_override)
        scenarios = [replace(base, M=M).validate() for M in M_values]
        if "conventional" in method_list:
            odd = [s.M for s in scenarios if s.M % 2]
            if odd:
                raise ScenarioError(f"Conventional RIS needs even M, got {odd}", "M even")
    except ScenarioError as exc:
        _fail(str(exc), EXIT_SCENARIO)
    settings = SolverSettings.from_env()
    out = Path(out_dir)
    # draws depend on seed, K and N only, so every M and method sees the same channels
    fading = sample_fading(base)

    def sweep_point(scenario: Scenario) -> list[tuple[int, str, float, str]]:
        rows = []
        solved = compare_schemes(scenario, method_list, settings, fading=fading)
        for method, solution in solved.items():
            write_run_outputs(
                out / f"M{scenario.M}_{method}", scenario, fading, solution, settings, method
            )
            rows.append((scenario.M, method, solution.sum_rate, solution.status))
        return rows

    try:
        results = map_ordered(sweep_point, scenarios, workers, name="sweep")
    except ConicError as exc:
        _fail(f"solver failure: {exc}", EXIT_SOLVER)
    rows = [row for point in results for row in point]
    write_sweep(out / "sweep.csv", [(M, method, rate) for M, method, rate, _ in rows])
    for M, method, rate, status in rows:
        click.echo(f"M={M} {method}: {rate:.6f} ({status})")
    if any(status == "failed" for *_, status in rows):
        _fail("a subproblem failed in at least one sweep point", EXIT_SOLVER)


@main.command("splitting-profile")
@click.option("--scenario", "scenario_path", type=SCENARIO_FILE, required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed-override", type=int, default=None)
def cmd_splitting_profile(scenario_path: str, out_dir: str, seed_override: int | None) -> None:
    """Per-slot mean reflection and transmission amplitudes of the energy-splitting run."""
    try:
        scenario = _load(scenario_path, seed_override)
    except ScenarioError as exc:
        _fail(str(exc), EXIT_SCENARIO)
    settings = SolverSettings.from_env()
    fading = sample_fading(scenario)
    try:
        solution = run(scenario, settings, fading=fading)
    except ConicError as exc:
        _fail(f"solver failure: {exc}", EXIT_SOLVER)
    out = Path(out_dir)
    write_run_outputs(out, scenario, fading, solution, settings, "es")
    path = write_splitting_profile(out / "splitting.csv", solution.mean_split())
    click.echo(f"Wrote {path}")
    if solution.status == "failed":
        _fail("a subproblem failed; profile holds the last usable iterate", EXIT_SOLVER)

"""Solver settings: every numeric constant of the optimization loops, env-overridable."""

from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path

from dotenv import load_dotenv

log = logging.getLogger(__name__)

ENV_PREFIX = "STAR_UAV_"


@dataclass(frozen=True)
class SolverSettings:
    # conic backend
    solver: str = "CLARABEL"
    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    max_solver_iters: int = 200
    # beamforming (SROCR)
    srocr_delta0: float = 0.1
    srocr_upsilon: float = 1e-3
    beam_obj_tol: float = 1e-3
    beam_max_iters: int = 40
    extraction_slack: float = 0.02
    order_penalty: float = 1e3
    # trajectory (SCA)
    traj_delta: float = 1e-2
    traj_max_iters: int = 30
    min_distance: float = 1.0
    traj_w_weighted: bool = False
    # power (SCA)
    power_delta: float = 1e-3
    power_max_iters: int = 50
    # alternating driver
    outer_delta: float = 1e-2
    outer_max_iters: int = 30
    monotone_tol: float = 1e-6
    # per-slot worker threads
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SolverSettings:
        known = {k for k in cls.__dataclass_fields__}
        filtered = {k: v for k, v in d.items() if k in known}
        return cls(**filtered)

    @classmethod
    def from_env(cls, env_file: str | Path | None = None) -> SolverSettings:
        """Build settings from defaults, overridden by ``STAR_UAV_<FIELD>`` variables.

        A ``.env`` file (default: the current directory's) is loaded first; variables
        already present in the environment win over the file.
        """
        load_dotenv(env_file if env_file is not None else Path.cwd() / ".env")
        overrides = {}
        for f in dataclasses.fields(cls):
            raw = os.environ.get(ENV_PREFIX + f.name.upper())
            if raw is None:
                continue
            overrides[f.name] = _coerce(f.name, f.type, raw)
        if overrides:
            log.debug("Solver settings overridden from environment: %s", sorted(overrides))
        return cls(**overrides)


def _coerce(name: str, type_name: str, raw: str):
    raw = raw.strip()
    try:
        if type_name == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(f"Invalid value {raw!r} for {ENV_PREFIX}{name.upper()}") from None

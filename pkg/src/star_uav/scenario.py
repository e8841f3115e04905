"""Scenario model: immutable experiment configuration, validation, and the scenario file format.

Scenario file format (one ``key = value`` per line, ``#`` starts a comment)::

    H = 30
    z_R = 20
    omega_R = 0, 0
    M = 8
    N = 30
    D = 30
    q_start = 10, -250
    q_end = 10, 250
    P_max = 30 dBm
    sigma2 = -80 dBm
    xi = -30 dB
    o1 = 3
    o2 = 2
    o3 = 2.8
    d_over_lambda = 0.5
    seed = 0

    [user]
    position = 20, 10
    space = reflection
    order = 4

Global keys must precede the first ``[user]`` block. Missing global keys take the
defaults below; a file without ``[user]`` blocks gets the default user layout.
Powers (``P_max``, ``sigma2``) accept a ``dBm``, ``mW`` or ``W`` suffix (bare numbers
are watts); ``xi`` accepts a ``dB`` suffix (bare numbers are linear).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class Space(str, Enum):
    REFLECTION = "reflection"
    TRANSMISSION = "transmission"

    @property
    def index(self) -> int:
        """Mode index used in every (..., 2) array: 0 = reflection, 1 = transmission."""
        return 0 if self is Space.REFLECTION else 1


class ScenarioError(ValueError):
    """A scenario violates one of its invariants."""

    def __init__(self, message: str, invariant: str = ""):
        super().__init__(message)
        self.invariant = invariant


class ScenarioParseError(ScenarioError):
    """A scenario file line could not be parsed."""

    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}", invariant="well-formed file")
        self.lineno = lineno


@dataclass(frozen=True)
class UserSpec:
    position: tuple[float, float]
    space: Space
    order: int  # decoding-order position, 1..K


def _default_users() -> tuple[UserSpec, ...]:
    # one reflection-space user on the UAV's side, three transmission-space users behind
    # the surface; the reflection user is decoded last (strongest channel)
    return (
        UserSpec((-30.0, -20.0), Space.TRANSMISSION, 1),
        UserSpec((-25.0, 20.0), Space.TRANSMISSION, 2),
        UserSpec((-15.0, 5.0), Space.TRANSMISSION, 3),
        UserSpec((20.0, 10.0), Space.REFLECTION, 4),
    )


@dataclass(frozen=True)
class Scenario:
    """Geometry, radio and budget parameters of one experiment (SI units, watts)."""

    H: float = 30.0
    z_R: float = 20.0
    omega_R: tuple[float, float] = (0.0, 0.0)
    users: tuple[UserSpec, ...] = field(default_factory=_default_users)
    M: int = 8
    N: int = 30
    D: float = 30.0
    q_start: tuple[float, float] = (10.0, -250.0)
    q_end: tuple[float, float] = (10.0, 250.0)
    P_max: float = 1.0
    sigma2: float = 1e-11
    xi: float = 1e-3
    o1: float = 3.0
    o2: float = 2.0
    o3: float = 2.8
    d_over_lambda: float = 0.5
    seed: int = 0

    @property
    def K(self) -> int:
        return len(self.users)

    @property
    def ordered_users(self) -> list[UserSpec]:
        """Users sorted by decoding order (index k in code = order - 1)."""
        return sorted(self.users, key=lambda u: u.order)

    @property
    def user_positions(self) -> np.ndarray:
        return np.array([u.position for u in self.ordered_users], dtype=float).reshape(-1, 2)

    @property
    def user_modes(self) -> np.ndarray:
        """Mode index per user in decoding order (0 = reflection, 1 = transmission)."""
        return np.array([u.space.index for u in self.ordered_users], dtype=int)

    @property
    def surface_position(self) -> np.ndarray:
        return np.asarray(self.omega_R, dtype=float)

    def count(self, space: Space) -> int:
        return sum(1 for u in self.users if u.space is space)

    def validate(self) -> Scenario:
        """Check every invariant; raise ScenarioError naming the first one violated."""
        if not (self.H > self.z_R > 0):
            raise ScenarioError(
                f"Invalid altitudes H={self.H}, z_R={self.z_R}: need H > z_R > 0",
                invariant="H > z_R > 0",
            )
        if self.M < 1:
            raise ScenarioError(f"Invalid element count M={self.M}: need M >= 1", "M >= 1")
        if self.N < 1:
            raise ScenarioError(f"Invalid slot count N={self.N}: need N >= 1", "N >= 1")
        if not self.D >= 0:
            raise ScenarioError(f"Invalid displacement D={self.D}: need D >= 0", "D >= 0")
        if not self.P_max > 0:
            raise ScenarioError(f"Invalid P_max={self.P_max}: need P_max > 0", "P_max > 0")
        if not self.sigma2 > 0:
            raise ScenarioError(f"Invalid sigma2={self.sigma2}: need sigma2 > 0", "sigma2 > 0")
        if not self.xi > 0:
            raise ScenarioError(f"Invalid xi={self.xi}: need xi > 0", "xi > 0")
        for name in ("H", "z_R", "D", "P_max", "sigma2", "xi", "o1", "o2", "o3", "d_over_lambda"):
            if not math.isfinite(getattr(self, name)):
                raise ScenarioError(f"Invalid {name}: must be finite", f"{name} finite")
        for name in ("q_start", "q_end", "omega_R"):
            if not np.all(np.isfinite(np.asarray(getattr(self, name), dtype=float))):
                raise ScenarioError(f"Invalid {name}: must be finite", f"{name} finite")
        for k, user in enumerate(self.users):
            if not np.all(np.isfinite(np.asarray(user.position, dtype=float))):
                raise ScenarioError(
                    f"Invalid position of user {k}: must be finite", "user position finite"
                )
        gap = math.dist(self.q_start, self.q_end)
        if gap > self.N * self.D + 1e-9:
            raise ScenarioError(
                f"Endpoints are {gap:.3f} m apart but N*D = {self.N * self.D:.3f} m",
                invariant="||q_end - q_start|| <= N*D",
            )
        if self.K < 1:
            raise ScenarioError("Scenario has no users", invariant="K >= 1")
        orders = sorted(u.order for u in self.users)
        if orders != list(range(1, self.K + 1)):
            raise ScenarioError(
                f"User orders {orders} are not a permutation of 1..{self.K}",
                invariant="orders permute 1..K",
            )
        if self.count(Space.REFLECTION) + self.count(Space.TRANSMISSION) != self.K:
            raise ScenarioError("Every user needs a space tag", invariant="R + T = K")
        return self


def default_scenario(**overrides) -> Scenario:
    """Validated scenario with the reference geometry, any field overridable."""
    return replace(Scenario(), **overrides).validate()


# --- File parsing ---

_GLOBAL_KEYS = {
    "H": float,
    "z_R": float,
    "omega_R": "vec2",
    "M": int,
    "N": int,
    "D": float,
    "q_start": "vec2",
    "q_end": "vec2",
    "P_max": "power",
    "sigma2": "power",
    "xi": "gain",
    "o1": float,
    "o2": float,
    "o3": float,
    "d_over_lambda": float,
    "seed": int,
}
_USER_KEYS = ("position", "space", "order")


def dbm_to_watts(dbm: float) -> float:
    return 10 ** ((dbm - 30) / 10)


def _parse_value(kind, raw: str, lineno: int):
    try:
        if kind == "vec2":
            parts = [p.strip() for p in raw.split(",")]
            if len(parts) != 2:
                raise ValueError("expected two comma-separated numbers")
            return (float(parts[0]), float(parts[1]))
        if kind == "power":
            text = raw.replace(" ", "")
            if text.lower().endswith("dbm"):
                return dbm_to_watts(float(text[:-3]))
            if text.lower().endswith("mw"):
                return float(text[:-2]) * 1e-3
            if text.lower().endswith("w"):
                return float(text[:-1])
            return float(text)
        if kind == "gain":
            text = raw.replace(" ", "")
            if text.lower().endswith("db"):
                return 10 ** (float(text[:-2]) / 10)
            return float(text)
        if kind is int:
            try:
                return int(raw)
            except ValueError:
                value = float(raw)
                if value != int(value):
                    raise ValueError("expected an integer") from None
                return int(value)
        return kind(raw)
    except ValueError as exc:
        raise ScenarioParseError(f"bad value {raw!r}: {exc}", lineno) from None


def parse_scenario(text: str) -> Scenario:
    """Parse scenario-file text into a validated Scenario."""
    values: dict = {}
    users: list[dict] = []
    user_lines: list[int] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line.lower() != "[user]":
                raise ScenarioParseError(f"unknown section {line!r}", lineno)
            users.append({})
            user_lines.append(lineno)
            continue
        if "=" not in line:
            raise ScenarioParseError(f"expected 'key = value', got {line!r}", lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if not raw:
            raise ScenarioParseError(f"missing value for {key!r}", lineno)
        if users:
            block = users[-1]
            if key not in _USER_KEYS:
                raise ScenarioParseError(f"unknown user key {key!r}", lineno)
            if key in block:
                raise ScenarioParseError(f"duplicate user key {key!r}", lineno)
            if key == "position":
                block[key] = _parse_value("vec2", raw, lineno)
            elif key == "space":
                try:
                    block[key] = Space(raw.lower())
                except ValueError:
                    raise ScenarioParseError(
                        f"space must be 'reflection' or 'transmission', got {raw!r}", lineno
                    ) from None
            else:
                block[key] = _parse_value(int, raw, lineno)
            continue
        if key not in _GLOBAL_KEYS:
            raise ScenarioParseError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ScenarioParseError(f"duplicate key {key!r}", lineno)
        values[key] = _parse_value(_GLOBAL_KEYS[key], raw, lineno)

    if users:
        specs = []
        for block, lineno in zip(users, user_lines):
            missing = [k for k in _USER_KEYS if k not in block]
            if missing:
                raise ScenarioParseError(f"[user] block missing {', '.join(missing)}", lineno)
            specs.append(UserSpec(block["position"], block["space"], block["order"]))
        values["users"] = tuple(specs)

    return Scenario(**values).validate()


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file."""
    path = Path(path)
    scenario = parse_scenario(path.read_text())
    log.debug("Loaded scenario %s: K=%d M=%d N=%d", path, scenario.K, scenario.M, scenario.N)
    return scenario


def format_scenario(scenario: Scenario) -> str:
    """Write a Scenario in the file format; ``parse_scenario`` reads it back exactly."""

    def vec(v) -> str:
        return f"{float(v[0])!r}, {float(v[1])!r}"

    lines = [
        f"H = {float(scenario.H)!r}",
        f"z_R = {float(scenario.z_R)!r}",
        f"omega_R = {vec(scenario.omega_R)}",
        f"M = {scenario.M}",
        f"N = {scenario.N}",
        f"D = {float(scenario.D)!r}",
        f"q_start = {vec(scenario.q_start)}",
        f"q_end = {vec(scenario.q_end)}",
        f"P_max = {float(scenario.P_max)!r} W",
        f"sigma2 = {float(scenario.sigma2)!r} W",
        f"xi = {float(scenario.xi)!r}",
        f"o1 = {float(scenario.o1)!r}",
        f"o2 = {float(scenario.o2)!r}",
        f"o3 = {float(scenario.o3)!r}",
        f"d_over_lambda = {float(scenario.d_over_lambda)!r}",
        f"seed = {scenario.seed}",
    ]
    for user in scenario.ordered_users:
        lines += [
            "",
            "[user]",
            f"position = {vec(user.position)}",
            f"space = {user.space.value}",
            f"order = {user.order}",
        ]
    return "\n".join(lines) + "\n"

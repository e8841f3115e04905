"""Shared scenario fixtures."""

from __future__ import annotations

import pytest

from star_uav.scenario import Scenario, Space, UserSpec, default_scenario
from star_uav.settings import SolverSettings

TINY_USERS = (
    UserSpec((-20.0, 10.0), Space.TRANSMISSION, 1),
    UserSpec((15.0, 5.0), Space.REFLECTION, 2),
)


@pytest.fixture
def tiny_scenario() -> Scenario:
    """Two users, two elements, two slots: small enough for real solves in unit tests."""
    return default_scenario(
        users=TINY_USERS,
        M=2,
        N=2,
        D=30.0,
        q_start=(10.0, -20.0),
        q_end=(10.0, 20.0),
    )


@pytest.fixture
def desk_scenario() -> Scenario:
    """Reference geometry at desk scale: N = 10, M = 8, K = 4, endpoints scaled in."""
    return default_scenario(N=10, M=8, D=30.0, q_start=(10.0, -100.0), q_end=(10.0, 100.0))


@pytest.fixture
def settings() -> SolverSettings:
    return SolverSettings()

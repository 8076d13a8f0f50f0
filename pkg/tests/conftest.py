"""Shared fixtures for scatterguard tests."""

from dataclasses import replace

import pytest

from src.models import AttackerConfig, AttackerKind, ScenarioSpec
from src.pipeline import PipelineParams


@pytest.fixture
def small_scenario():
    """Create a short genuine-tag scenario with three movements."""
    return ScenarioSpec(movement_count=3, hold_s=0.1, seed=7)


@pytest.fixture
def constant_attacker_scenario(small_scenario):
    """Create the short scenario with a constant-power attacker at 1 m."""
    return replace(small_scenario, attacker=AttackerConfig(kind=AttackerKind.CONSTANT_POWER, distance_m=1.0))


@pytest.fixture
def powerful_attacker_scenario(small_scenario):
    """Create the short scenario with a powerful attacker reacting after 50 ms."""
    return replace(
        small_scenario,
        attacker=AttackerConfig(kind=AttackerKind.POWERFUL, distance_m=1.0, reaction_latency_s=0.05),
    )


@pytest.fixture
def params():
    """Create default pipeline parameters."""
    return PipelineParams()


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """Keep SCATTERGUARD_* variables from the developer shell out of tests."""
    for name in ("SCATTERGUARD_CONFIG", "SCATTERGUARD_SEED", "SCATTERGUARD_TRIALS", "SCATTERGUARD_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)

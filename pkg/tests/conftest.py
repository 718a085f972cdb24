from pathlib import Path

import pytest

from catsim.engine import Scenario
from catsim.world import parse_world

REPO_ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = REPO_ROOT / "scenarios"


def scenario_path(name: str) -> Path:
    return SCENARIOS / f"{name}.json"


def load_scenario(name: str, duration: float, seed: int = 0) -> Scenario:
    world = parse_world(scenario_path(name).read_text())
    return Scenario(world=world, duration=duration, seed=seed)


@pytest.fixture
def leader_follower():
    def make(duration=2.0, seed=42):
        return load_scenario("leader_follower", duration, seed)
    return make

from pathlib import Path

import pytest

from mbmp_sim.scenario import load_scenario

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def scenario_dir():
    return SCENARIO_DIR


@pytest.fixture
def bundled():
    """Load a scenario shipped under scenarios/ by stem."""
    return lambda name: load_scenario(SCENARIO_DIR / f"{name}.json")

import sys
from pathlib import Path

import pytest

from parkflow.park import Scenario, load_scenario

# the shared tiny-instance generator lives next to the tests
sys.path.insert(0, str(Path(__file__).parent))

DATA_DIR = Path(__file__).parent.parent / "src" / "parkflow" / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def park_path() -> Path:
    return DATA_DIR / "park_east_china.json"


@pytest.fixture(scope="session")
def park(park_path) -> Scenario:
    return load_scenario(park_path)

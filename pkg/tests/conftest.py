import os

import pytest

from scripts.config import REPO_ROOT, load_config
from scripts.sim_core import Engine

SCENARIO_DIR = os.path.join(REPO_ROOT, "scenarios")


@pytest.fixture(scope="session")
def configs():
    return load_config()


@pytest.fixture
def engine():
    return Engine(seed=1)


@pytest.fixture
def scenario_file(tmp_path):
    """Write a scenario document and return its path."""
    def write(text, name="scenario.yaml"):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return write

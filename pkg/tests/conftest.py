import sys
from pathlib import Path

import pytest

from cirque.mllm import reset_mock_states

sys.path.insert(0, str(Path(__file__).parent))

from synth import SynthWorld, build_world, write_world  # noqa: E402


@pytest.fixture(autouse=True)
def _fresh_mock_counters():
    reset_mock_states()
    yield
    reset_mock_states()


@pytest.fixture(scope="session")
def world() -> SynthWorld:
    return build_world()


@pytest.fixture()
def world_on_disk(world, tmp_path):
    return write_world(world, tmp_path / "world")

"""Pytest configuration and shared fixtures."""

import tempfile
from pathlib import Path

import numpy as np
import pytest
import torch

from app.config import Config
from app.models.configs import SynthConfig
from app.models.motion import InteractionPair, MotionSequence, Role, mini_skeleton
from app.services.synthetic import generate_pair, make_dataset

ENV_VARS = (
    "REMOS_THREADS",
    "REMOS_DTYPE",
    "DEBUG",
    "LOG_LEVEL",
    "DATA_DIR",
    "LOGS_DIR",
)


@pytest.fixture(autouse=True)
def float64_precision():
    """Run every test in 64-bit precision and restore the previous default."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Keep settings from the developer's shell out of the tests."""
    for name in ENV_VARS:
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing."""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield Path(temp_dir)


@pytest.fixture
def test_config(temp_dir):
    """Create a test configuration."""
    return Config(
        debug=True,
        log_level="DEBUG",
        data_dir=temp_dir / "data",
        logs_dir=temp_dir / "logs",
    )


@pytest.fixture
def skeleton():
    """The 11 + 4 joint skeleton."""
    return mini_skeleton()


@pytest.fixture
def synth_config():
    """Two pairs of 100 frames: ten windows of 20 frames."""
    return SynthConfig(num_pairs=2)


@pytest.fixture
def small_pair(synth_config):
    return generate_pair(synth_config, 0)


@pytest.fixture
def small_split(synth_config):
    """8 train and 2 test windows."""
    return make_dataset(synth_config)


@pytest.fixture
def random_pair(skeleton):
    """Five frames of random positions for both characters."""
    rng = np.random.default_rng(7)
    actor = rng.normal(size=(5, skeleton.num_joints, 3))
    reactor = rng.normal(size=(5, skeleton.num_joints, 3))
    return InteractionPair(
        MotionSequence(20.0, actor, Role.ACTOR, skeleton),
        MotionSequence(20.0, reactor, Role.REACTOR, skeleton),
        skeleton,
    )


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line("markers", "integration: marks tests as integration tests")
    config.addinivalue_line("markers", "unit: marks tests as unit tests")

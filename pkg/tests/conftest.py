"""
Shared fixtures for the engine and harness tests
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path to access engine/ and harness/
sys.path.insert(0, str(Path(__file__).parent.parent))

from engine.models import MlpSpec, init_params  # noqa: E402
from engine.tasks import SinusoidSource, SynthClsConfig, SynthClsSource  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec():
    return MlpSpec((1, 8, 1), "tanh")


@pytest.fixture
def tiny_theta(tiny_spec):
    return init_params(tiny_spec, seed=7)


@pytest.fixture
def sinusoid_batch():
    return SinusoidSource(shot=5, query=5, seed=3).sample_batch(4)


@pytest.fixture
def synth_cfg():
    return SynthClsConfig(way=3, shot=2, query_per_class=4, dim=4)


@pytest.fixture
def synth_batch(synth_cfg):
    return SynthClsSource(synth_cfg, seed=5).sample_batch(2)


@pytest.fixture
def run_dir(tmp_path):
    path = tmp_path / "run"
    path.mkdir()
    return path

"""
Shared fixtures for the calo-diffsim test suite.
"""

import sys
from pathlib import Path

import pytest

# Add src to path to import modules
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from calo_diffsim.models import GeometrySpec, ShowerModelParams, TrainingHyper
from calo_diffsim.showergen import generate_events


@pytest.fixture(scope="session")
def geometry():
    return GeometrySpec()


@pytest.fixture(scope="session")
def shower_params():
    return ShowerModelParams()


@pytest.fixture(scope="session")
def events(geometry, shower_params):
    """A small, fixed set of discrete toy showers."""
    return generate_events(geometry, shower_params, 24, seed=11)


@pytest.fixture(scope="session")
def other_events(geometry, shower_params):
    return generate_events(geometry, shower_params, 24, seed=12)


@pytest.fixture
def tiny_hyper():
    """Network sizes small enough for unit tests."""
    return TrainingHyper(
        learning_rate=1e-3,
        batch_size=8,
        steps=4,
        eval_every=2,
        checkpoint_every=2,
        holdout_fraction=0.25,
        width=8,
        time_embedding_dim=4,
        grid_channels=(4, 8),
        dense_width=8,
    )

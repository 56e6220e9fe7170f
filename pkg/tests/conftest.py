"""Shared fixtures: coarse garments, flat states and a tiny dataset."""

import numpy as np
import pytest

from core.config import load_config
from modules.garment.generator import GarmentSpec, generate_garment
from modules.percept.render import render_partial
from modules.sim.state import SimState, build_constraints
from modules.training.dataset import CorrDataset, GarmentRecord


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs the cloth simulator for many steps")


@pytest.fixture(scope="session")
def config():
    return load_config(preset="test")


@pytest.fixture(scope="session")
def top():
    return generate_garment(GarmentSpec(edge_length=0.05))


@pytest.fixture(scope="session")
def other_top():
    return generate_garment(GarmentSpec(edge_length=0.05, body_width=0.54, sleeve_length=0.16, seed=1))


@pytest.fixture
def flat(top, config):
    constraints = build_constraints(top, config.sim)
    return SimState.flat(top, constraints), constraints


def shifted(state: SimState, offset) -> SimState:
    moved = state.copy()
    moved.positions = moved.positions + np.asarray(offset, dtype=np.float64)
    return moved


def observations(mesh, config, count=3):
    """Renders of the flat pose under different placements and sampling seeds."""
    state = SimState.flat(mesh, build_constraints(mesh, config.sim))
    offsets = [(0.0, 0.0, 0.0), (0.05, -0.03, 0.0), (-0.04, 0.02, 0.0), (0.02, 0.06, 0.0)]
    return [render_partial(shifted(state, offsets[i]), mesh, seed=i, render=config.render)
            for i in range(count)]


@pytest.fixture(scope="session")
def dataset(top, other_top):
    config = load_config(preset="test")
    return CorrDataset([
        GarmentRecord(mesh=top, observations=observations(top, config)),
        GarmentRecord(mesh=other_top, observations=observations(other_top, config)),
    ])

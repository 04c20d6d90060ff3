# tests/conftest.py
import json

import numpy as np
import pytest

from models.core import GaussianBlob, Grid3, ScenarioSpec, SimParams, scenario_to_dict


def make_small_spec(chi=1.0, gamma=1.0, t_end=0.5, dt=0.1, seed=7, n=16, extent=32.0,
                    c_amplitude=1.0):
    """A radially symmetric blob scenario on a coarse grid, cheap enough for unit tests."""
    center = (extent / 2,) * 3
    return ScenarioSpec(
        params=SimParams(gamma=gamma, chi=chi, mass=1.0, dt=dt, t_end=t_end, seed=seed),
        grid=Grid3(extent, n),
        rho0=(GaussianBlob(center=center, sigma=3.0),),
        c0=(GaussianBlob(center=center, sigma=6.0, amplitude=c_amplitude),),
        name="small",
    )


@pytest.fixture
def small_spec():
    return make_small_spec()


@pytest.fixture
def unit_grid():
    """16 cells of edge 1."""
    return Grid3(16.0, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_scenario_file(tmp_path):
    spec = make_small_spec(t_end=0.2, n=8, extent=16.0)
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(scenario_to_dict(spec)))
    return str(path)

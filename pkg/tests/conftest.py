import numpy as np
import pytest

from epsrelax.core.control_data import Box, ControlData
from epsrelax.dynamics.system import make_quintic_transition
from epsrelax.models.hopper import HopperParams, HopperTask, hopper_system
from epsrelax.models.library import crossing1d, grazing2d, sliding1d, smooth1d


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def phi():
    return make_quintic_transition()


@pytest.fixture
def sliding():
    return sliding1d()


@pytest.fixture
def crossing():
    return crossing1d()


@pytest.fixture
def grazing():
    return grazing2d()


@pytest.fixture
def integrator():
    return smooth1d()


@pytest.fixture
def hopper():
    return hopper_system(HopperParams())


@pytest.fixture
def hopper_task():
    return HopperTask()


@pytest.fixture
def crossing_xi():
    return ControlData.constant([-0.5], 0.0, 10, u_box=Box.interval(-0.25, 0.25, 1))

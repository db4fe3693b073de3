import numpy as np
import pytest

from csoslab.elliptic import ModelParams
from csoslab.lattice import LatticeConfig, homogeneous_config
from csoslab.bethe import all_ground_states

# shared desk-scale model: L=3, r=1, generic complex height shift
TAU = 0.8j
S0 = 0.41 + 0.13j
INHOM_Y = (0.04, -0.03, 0.02, -0.05, 0.035, -0.02, 0.05, -0.04)


@pytest.fixture(scope="session")
def params():
    return ModelParams(tau=TAU, r=1, L=3, s0=S0)


@pytest.fixture(scope="session")
def config4(params):
    """Admissible inhomogeneous N=4 lattice (xi on the line Re = 1/2)."""
    return LatticeConfig(N=4, xi=tuple(0.5 + 1j * y for y in INHOM_Y[:4]))


@pytest.fixture(scope="session")
def config4_homog():
    return homogeneous_config(4)


@pytest.fixture(scope="session")
def ground4(params, config4):
    return all_ground_states(config4, params)


@pytest.fixture(scope="session")
def ground4_homog(params, config4_homog):
    return all_ground_states(config4_homog, params)


@pytest.fixture(scope="session")
def params_phys():
    """Ordered-regime parameters with the physical height shift."""
    tau = 0.45j
    return ModelParams(tau=tau, r=1, L=3, s0=tau / (2.0 / 3.0))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)

import numpy as np
import pytest

from services.scenario_service import build_scenario_spec
from tests.oracles import tiny_context, tiny_prior


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def prior():
    return tiny_prior(num_freqs=4, area_sizes=(2, 1))


@pytest.fixture
def scalar_context():
    return tiny_context(mode="scalar")


@pytest.fixture
def desk_spec():
    return build_scenario_spec(desk=True)


@pytest.fixture
def small_spec():
    """Desk layout with fewer particles and a looser noise level, for end-to-end runs."""
    return build_scenario_spec(desk=True, n_particles=20, noise_std=0.05)

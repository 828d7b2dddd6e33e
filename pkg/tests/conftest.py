import numpy as np
import pytest

from cwce.scm_core import Individual, ScmParams, simulate_panel


@pytest.fixture
def gaussian_params():
    return ScmParams.gaussian_preset()


@pytest.fixture
def lognormal_params():
    return ScmParams.lognormal_preset()


@pytest.fixture
def truncated_params():
    return ScmParams.truncated_preset()


@pytest.fixture
def crossover_params():
    return ScmParams.crossover_preset()


@pytest.fixture
def small_gaussian_panel(gaussian_params):
    return simulate_panel(gaussian_params, n=20, m=6, seed=7)


@pytest.fixture
def zero_individual():
    """All latents, noises and confounders 0, never exposed, m = 3."""
    zeros = np.zeros(3)
    return Individual.from_arrays(
        u=zeros, noise_y=zeros, noise_a=np.ones(3), c=zeros, a=np.zeros(3, dtype=int), y=np.full(3, 120.0)
    )

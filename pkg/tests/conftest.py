import numpy as np
import pytest
import torch

from mvmtwin.phantom import PhantomParams, generate_phantom

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_params():
    return PhantomParams(H=32, W=32, T=12, r_inner0=6.0, r_outer0=10.0, amp=1.5, seed=3)


@pytest.fixture(scope="session")
def small_study(small_params):
    return generate_phantom(small_params)


@pytest.fixture(scope="session")
def phantom_study():
    return generate_phantom(PhantomParams(seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

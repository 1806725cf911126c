import numpy as np
import pytest

from fcsdpc.checks import noisy_dataset
from fcsdpc.config import default_config
from fcsdpc.decoder import available_backends


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture(scope="session")
def noisy_D():
    """Full-row-rank noisy data: n=3, m=2, p=2, N_p=2, N_f=2."""
    return noisy_dataset(np.random.default_rng(7), 3, 2, 2, 2, 2)


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param

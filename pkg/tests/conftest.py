import numpy as np
import pytest
import torch

from lmolab import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request):
    """Each available kernel implementation (compiled and pure Python)."""
    return kernels.backends()[request.param]


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)

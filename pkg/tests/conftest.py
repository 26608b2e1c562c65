import numpy as np
import pytest

from mfgfem import build_fespace, generate_uniform_unit_square


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def mesh4():
    return generate_uniform_unit_square(4)


@pytest.fixture(scope="session")
def fes4(mesh4):
    return build_fespace(mesh4)

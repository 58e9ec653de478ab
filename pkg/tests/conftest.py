import numpy as np
import pytest

from phturnpike.ph_models import (DiffusionConfig, PHSystem, TimoshenkoConfig, build_diffusion,
                                  build_timoshenko)


@pytest.fixture(scope="session")
def diffusion():
    return build_diffusion()


@pytest.fixture(scope="session")
def small_diffusion():
    return build_diffusion(DiffusionConfig(n_cells=5))


@pytest.fixture(scope="session")
def timoshenko():
    return build_timoshenko()


@pytest.fixture(scope="session")
def small_timoshenko():
    return build_timoshenko(TimoshenkoConfig(n_nodes=4))


@pytest.fixture
def decoupled():
    """Two independent decaying states, the input reaches only the first"""
    return PHSystem.from_matrices(np.zeros((2, 2)), np.diag([1.0, 1.0]), [[1.0], [0.0]], name="decoupled")


@pytest.fixture
def scalar_decay():
    return PHSystem.from_matrices([[0.0]], [[1.0]], [[0.0]], name="scalar")


def sin_profile(sys):
    return np.sin(np.pi * sys.grid.positions)

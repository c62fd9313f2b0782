import math

import numpy as np
import pytest

from modalrecon.spectral import ModelKind, build_model


@pytest.fixture(scope="session")
def wave_pi():
    """Dirichlet wave on (0, pi): mu_k = k, the simplest worked model."""
    return build_model(ModelKind("wave", "dirichlet_interval"),
                       math.pi, 0.0, 16, 96)


@pytest.fixture(scope="session")
def wave_circle():
    return build_model(ModelKind("wave", "periodic_circle"),
                       2.0 * math.pi, 1.0, 9, 64)


@pytest.fixture(scope="session")
def plate_pi():
    return build_model(ModelKind("plate", "dirichlet_interval"),
                       math.pi, 0.0, 12, 72)


@pytest.fixture(scope="session")
def nls_circle():
    return build_model(ModelKind("nls", "periodic_circle"),
                       2.0 * math.pi, 0.0, 13, 80)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))

import numpy as np
import pytest

from credo import Topology, WeightSchedule
from credo.sensing import SensingModel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_node_model():
    """N=2, M=2, canonical rows, noise variance 0.25."""
    return SensingModel((np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])),
                        (np.array([[0.25]]), np.array([[0.25]])))


@pytest.fixture
def k3():
    return Topology.complete(3)


@pytest.fixture
def path3():
    return Topology.path(3)


@pytest.fixture
def schedule():
    return WeightSchedule(a=1.0, shift=0, rho0=0.3, zeta0=1.0, eps=0.02, tau1=0.49,
                          benchmark_b=0.1, benchmark_delta1=0.49)

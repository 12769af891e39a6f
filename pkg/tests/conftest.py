"""Root conftest: session-scoped grids, charts and structures shared by the unit tests."""

import sys

import numpy as np
import pytest

sys.path.insert(0, "src")

SIGMA_I = np.array([0.0, 1.0])          # Z = i on the Siegel chart
D_DZ = np.array([0.5, -0.5j])           # d/dZ in (Re Z, Im Z)
D_DZ_BAR = np.array([0.5, 0.5j])


@pytest.fixture(scope="session")
def domain32():
    from tensor_geometry import GridDomain
    return GridDomain(1, 32)


@pytest.fixture(scope="session")
def domain16():
    from tensor_geometry import GridDomain
    return GridDomain(1, 16)


@pytest.fixture(scope="session")
def linear_chart(domain32):
    from kahler_family import linear_family
    return linear_family(domain32)


@pytest.fixture(scope="session")
def rigid_structure(linear_chart):
    """The constant structure J_Z at Z = i."""
    return linear_chart.structure_at(SIGMA_I)


@pytest.fixture(scope="session")
def tilted_structure(linear_chart):
    """The constant structure at Z = 0.3 + 1.2i."""
    return linear_chart.structure_at([0.3, 1.2])


@pytest.fixture(scope="session")
def perturbed_chart(domain16):
    from kahler_family import perturbed_family
    return perturbed_family(domain16, [([1, 0], 0.02)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest

from driftdg.mesh import Mesh, build_structured_unit_square


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def mesh_n2():
    return build_structured_unit_square(2)


@pytest.fixture(scope="session")
def mesh_n4():
    return build_structured_unit_square(4)


@pytest.fixture(scope="session")
def reference_mesh():
    """Two elements; element 0 is the reference-shaped triangle."""
    verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
    elems = [(0, 1, 2), (1, 3, 2)]
    return Mesh(verts, elems)


def random_points_in_triangle(rng, n):
    """Uniform barycentric samples of the reference triangle."""
    b = rng.dirichlet([1.0, 1.0, 1.0], size=n)
    return b[:, :2]

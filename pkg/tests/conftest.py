import numpy as np
import pytest

from flatmorse import (
    assemble_jacobi,
    assemble_laplace,
    cubic_lattice,
    flat_torus_mesh,
    minimize_area,
    shape_field,
    tpms_nodal_mesh,
    vertex_normals,
)


class Relaxed:
    """A relaxed mesh with the operators most tests need."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.ops = assemble_laplace(mesh)
        self.normals = vertex_normals(mesh)
        self.shape = shape_field(mesh, self.normals)
        self.jacobi = assemble_jacobi(self.ops, self.shape.a2)


@pytest.fixture
def flat8():
    return flat_torus_mesh(cubic_lattice(), 2, 8)


@pytest.fixture(scope="session")
def flat_setup():
    return Relaxed(flat_torus_mesh(cubic_lattice(), 2, 12))


@pytest.fixture(scope="session")
def d_coarse():
    """Relaxed Schwarz D at grid 24 (about 2200 vertices)."""
    mesh, _ = minimize_area(tpms_nodal_mesh("D", 24))
    return Relaxed(mesh)


@pytest.fixture(scope="session")
def d_coarse_basis(d_coarse):
    from flatmorse import harmonic_basis

    return harmonic_basis(d_coarse.mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

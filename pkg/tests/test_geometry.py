import _runs
import numpy as np
import pytest
import scipy.linalg

from flatmorse import (
    assemble_laplace,
    cubic_lattice,
    curvature_separation_threshold,
    flat_torus_mesh,
    gauss_defect,
    shape_field,
    vertex_normals,
)
from flatmorse.errors import NotOrientable
from flatmorse.geometry import mean_curvature
from flatmorse.torus import PeriodicMesh


def test_flat_normals_are_exact(flat8):
    n = vertex_normals(flat8)
    np.testing.assert_array_equal(np.abs(n), np.tile([0.0, 0.0, 1.0], (flat8.n_vertices, 1)))


def test_normals_are_unit(d_coarse):
    assert np.abs(np.linalg.norm(d_coarse.normals, axis=1) - 1).max() < 1e-10


def test_incoherent_orientation(flat8):
    faces = flat8.faces.copy()
    shifts = flat8.face_shifts.copy()
    faces[0] = faces[0, ::-1]
    shifts[0] = -shifts[0, [1, 0, 2]]
    m = PeriodicMesh(flat8.points, faces, shifts, flat8.lattice)
    with pytest.raises(NotOrientable):
        vertex_normals(m)


def test_flat_shape_field(flat8):
    sf = shape_field(flat8)
    for f in (sf.k1, sf.k2, sf.a2, sf.mean_curvature):
        np.testing.assert_array_equal(f, 0.0)


def test_laplace_kills_constants(d_coarse):
    S = d_coarse.ops.stiffness
    assert np.abs(S @ np.ones(S.shape[0])).max() <= 1e-12 * np.abs(S).max()


def test_mass_trace_is_area(d_coarse):
    assert d_coarse.ops.total_area == pytest.approx(d_coarse.mesh.area(), rel=1e-13)


def _first_eig(m):
    ops = assemble_laplace(flat_torus_mesh(cubic_lattice(1.0), 2, m))
    lam = scipy.linalg.eigh(ops.stiffness.toarray(), np.diag(ops.mass.diagonal()), subset_by_index=[1, 1],
                            eigvals_only=True)
    return lam[0]


def test_unit_square_spectrum_converges_quadratically():
    exact = 4 * np.pi**2
    e1, e2 = (abs(_first_eig(m) - exact) / exact for m in (8, 16))
    assert np.log2(e1 / e2) > 1.9


def test_flat_gauss_defect(flat8):
    gd = gauss_defect(flat8)
    assert np.abs(gd.defect).max() < 1e-12
    assert abs(gd.total) < 1e-12


def test_gauss_bonnet_on_d(d_coarse):
    assert gauss_defect(d_coarse.mesh).total == pytest.approx(-8 * np.pi, abs=1e-9)


def test_gauss_equation_correlation(d_coarse):
    gd = gauss_defect(d_coarse.mesh, d_coarse.ops)
    m = d_coarse.ops.mass_diagonal
    x, y = -2 * gd.curvature, d_coarse.shape.a2
    xm, ym = np.sum(m * x) / m.sum(), np.sum(m * y) / m.sum()
    corr = np.sum(m * (x - xm) * (y - ym)) / np.sqrt(np.sum(m * (x - xm) ** 2) * np.sum(m * (y - ym) ** 2))
    assert corr >= 0.99


def test_relaxed_d_is_nearly_minimal():
    run = _runs.pipeline_run("D", 64)
    h = run.mesh.mean_edge_length()
    assert np.abs(run.shape.mean_curvature).max() * h <= 1e-2
    assert np.abs(mean_curvature(run.mesh)).max() * h <= 1e-3


def test_principal_curvatures_nearly_opposite(d_coarse):
    sf = d_coarse.shape
    curved = sf.a2 > 0.1 * sf.a2.max()
    sep = sf.separation[curved]
    np.testing.assert_allclose(sep, 2 * np.abs(sf.k1[curved]), rtol=0.1)
    assert np.all(sep > 0)


def test_separation_flag(d_coarse, flat8):
    assert d_coarse.shape.hypothesis_holds(curvature_separation_threshold(d_coarse.mesh))
    assert not shape_field(flat8).hypothesis_holds(curvature_separation_threshold(flat8))

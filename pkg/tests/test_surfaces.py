import numpy as np
import pytest

from flatmorse import cubic_lattice, flat_torus_mesh, shape_field, subdivide, tpms_nodal_mesh, validate_mesh
from flatmorse.errors import TooCoarse
from flatmorse.remesh import isotropic_remesh, target_edge_length
from flatmorse.surfaces import nodal_function, nodal_gradient, project_to_nodal, tpms_lattice
from flatmorse.geometry import corner_angles


def test_flat_torus_counts_and_area():
    m = flat_torus_mesh(cubic_lattice(), 2, 8)
    assert m.euler_characteristic == 0
    assert m.area() == pytest.approx((2 * np.pi) ** 2, rel=1e-13)
    assert np.all(shape_field(m).a2 == 0)


def test_flat_torus_too_coarse():
    with pytest.raises(TooCoarse):
        flat_torus_mesh(cubic_lattice(), 2, 2)


@pytest.mark.parametrize("family", ["P", "D", "G"])
def test_tpms_genus_three(family):
    m = tpms_nodal_mesh(family, 20)
    d = validate_mesh(m)
    assert d.ok
    assert d.euler_characteristic == -4 and d.genus == 3


def test_unknown_family():
    with pytest.raises(ValueError):
        tpms_lattice("Q")


@pytest.mark.parametrize("family", ["P", "D", "G"])
def test_nodal_gradient_matches_differences(family, rng):
    x = rng.uniform(-4, 4, size=(20, 3))
    h = 1e-6
    fd = np.stack(
        [(nodal_function(family, x + h * e) - nodal_function(family, x - h * e)) / (2 * h) for e in np.eye(3)],
        axis=1,
    )
    np.testing.assert_allclose(nodal_gradient(family, x), fd, atol=1e-8)


def test_projection_lands_on_the_level_set(rng):
    m = tpms_nodal_mesh("D", 16, remesh_iterations=0)
    x = m.points + 0.02 * rng.standard_normal(m.points.shape)
    before = np.abs(nodal_function("D", x)).max()
    y = project_to_nodal("D", x)
    assert np.abs(nodal_function("D", y)).max() < 1e-6 * before


def test_subdivide_counts(flat8):
    s = subdivide(flat8)
    assert s.n_faces == 4 * flat8.n_faces
    assert s.euler_characteristic == flat8.euler_characteristic
    assert validate_mesh(s).ok


def test_subdivided_flat_stays_planar(flat8):
    s = subdivide(flat8)
    np.testing.assert_array_equal(s.points[:, 2], 0.0)
    assert np.all(shape_field(s).a2 == 0)
    assert s.area() == pytest.approx(flat8.area(), rel=1e-13)


def test_subdivide_keeps_genus():
    m = tpms_nodal_mesh("G", 16)
    s = subdivide(m)
    assert s.euler_characteristic == -4
    assert validate_mesh(s).ok


def test_remeshed_triangles_are_well_shaped():
    m = tpms_nodal_mesh("P", 24)
    ang = np.degrees(corner_angles(m))
    assert ang.min() > 20
    assert np.abs(nodal_function("P", m.points)).max() < 1e-6


def test_remesh_never_builds_collinear_faces():
    # valence flips next to split midpoints used to create zero-area faces here
    m = tpms_nodal_mesh("D", 48)
    assert np.degrees(corner_angles(m)).min() > 20
    assert m.euler_characteristic == -4


def test_remesh_flat_torus_stays_flat(flat8):
    L = target_edge_length(flat8, flat8.n_faces // 2)
    r = isotropic_remesh(flat8, L, 3)
    assert validate_mesh(r).ok
    assert r.euler_characteristic == 0
    assert np.abs(r.points[:, 2]).max() < 1e-12
    assert r.area() == pytest.approx(flat8.area(), rel=1e-10)


def test_tpms_too_coarse():
    with pytest.raises(TooCoarse):
        tpms_nodal_mesh("D", 8)

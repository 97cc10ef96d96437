import numpy as np
import pytest

from flatmorse import cubic_lattice, flat_torus_mesh, make_lattice, validate_mesh
from flatmorse.errors import DegenerateLattice, InvalidHandle, InvalidMesh
from flatmorse.torus import PeriodicMesh, edge_vector, wrap_point


def test_cubic_lattice_volume():
    lat = make_lattice(2 * np.pi * np.eye(3))
    assert lat.volume == pytest.approx((2 * np.pi) ** 3, rel=1e-14)


def test_zero_column_is_degenerate():
    b = np.eye(3)
    b[:, 1] = 0
    with pytest.raises(DegenerateLattice):
        make_lattice(b)


def test_sheared_lattice_volume():
    cols = np.array([[1, 0, 0], [0.5, 1, 0], [0, 0, 1]], dtype=float).T
    assert make_lattice(cols).volume == pytest.approx(1.0, rel=1e-14)


def test_non_square_basis_rejected():
    with pytest.raises(DegenerateLattice):
        make_lattice(np.ones((3, 2)))


def test_wrap_point_examples():
    lat = cubic_lattice(1.0)
    rep, s = wrap_point(lat, [1.25, -0.5, 0.0])
    np.testing.assert_allclose(rep, [0.25, 0.5, 0.0], atol=1e-15)
    np.testing.assert_array_equal(s, [1, -1, 0])

    rep, s = wrap_point(lat, [0.3, 0.4, 0.5])
    np.testing.assert_array_equal(rep, [0.3, 0.4, 0.5])
    np.testing.assert_array_equal(s, [0, 0, 0])


def test_wrap_point_half_open():
    rep, s = wrap_point(cubic_lattice(1.0), [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(rep, [0.0, 0.0, 0.0])
    np.testing.assert_array_equal(s, [1, 0, 0])


def _triangle(points, shifts):
    return PeriodicMesh(np.array(points, float), [[0, 1, 2]], [shifts], cubic_lattice(1.0))


def test_edge_vector_across_the_seam():
    m = _triangle([[0.9, 0, 0], [0.1, 0, 0], [0.1, 0.2, 0]], [[1, 0, 0], [0, 0, 0], [-1, 0, 0]])
    np.testing.assert_allclose(edge_vector(m, 0, 1), [0.2, 0, 0], atol=1e-15)
    np.testing.assert_allclose(edge_vector(m, 1, 0), [-0.2, 0, 0], atol=1e-15)


def test_edge_vector_without_shift():
    m = _triangle([[0, 0, 0], [0.1, 0.2, 0], [0.0, 0.3, 0]], [[0, 0, 0]] * 3)
    np.testing.assert_allclose(edge_vector(m, 0, 1), [0.1, 0.2, 0], atol=1e-15)


def test_missing_edge_handle():
    m = _triangle([[0, 0, 0], [0.1, 0.2, 0], [0.0, 0.3, 0]], [[0, 0, 0]] * 3)
    m2 = PeriodicMesh(np.vstack([m.points, [[0.5, 0.5, 0.5]]]), m.faces, m.face_shifts, m.lattice)
    with pytest.raises(InvalidHandle):
        m2.edge_shift(0, 3)


def test_grid_counts(flat8):
    d = validate_mesh(flat8)
    assert (flat8.n_vertices, flat8.n_edges, flat8.n_faces) == (64, 192, 128)
    assert d.ok
    assert d.euler_characteristic == 0 and d.genus == 1


def test_three_faces_on_an_edge(flat8):
    a, b = flat8.edges[0]
    s = flat8.edge_shifts[0]
    pts = np.vstack([flat8.points, flat8.points[a] + [0.1, 0.1, 0.5]])
    new = len(pts) - 1
    # the extra vertex is placed relative to a with zero shift
    extra_f = np.array([[a, b, new]])
    extra_s = np.array([[s, -s, np.zeros(3, int)]])
    m = PeriodicMesh(pts, np.vstack([flat8.faces, extra_f]), np.concatenate([flat8.face_shifts, extra_s]),
                     flat8.lattice)
    assert not validate_mesh(m).manifold


def test_shift_invariants(flat8):
    assert np.all(flat8.face_shifts.sum(axis=1) == 0)
    for (a, b), s in zip(flat8.edges[:20], flat8.edge_shifts[:20]):
        np.testing.assert_array_equal(flat8.edge_shift(b, a), -s)
    assert flat8.euler_characteristic % 2 == 0


def test_unwrapped_points_are_wrapped(flat8):
    shifted = flat8.with_points(flat8.points + 2 * np.pi * np.array([1.0, -2.0, 0.0]))
    np.testing.assert_allclose(shifted.points, flat8.points, atol=1e-12)
    np.testing.assert_allclose(shifted.edge_vectors(), flat8.edge_vectors(), atol=1e-12)


def test_bad_shapes():
    with pytest.raises(InvalidMesh):
        PeriodicMesh(np.zeros((3, 2)), [[0, 1, 2]], np.zeros((1, 3, 3)), cubic_lattice())
    with pytest.raises(InvalidMesh):
        PeriodicMesh(np.zeros((3, 3)), [[0, 1, 5]], np.zeros((1, 3, 3)), cubic_lattice())


def test_reversed_orientation_keeps_geometry(flat8):
    r = flat8.with_faces_reversed()
    assert validate_mesh(r).ok
    assert r.area() == pytest.approx(flat8.area(), rel=1e-14)


def test_flat_mesh_on_other_axes():
    for axis in range(3):
        m = flat_torus_mesh(cubic_lattice(), axis, 5)
        assert validate_mesh(m).ok
        np.testing.assert_allclose(m.points[:, axis], 0.0)

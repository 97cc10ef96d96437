import _runs
import numpy as np
import pytest
from scipy import sparse

from flatmorse import assemble_jacobi, eigen_lowest, morse_index
from flatmorse.errors import IndexAmbiguous, ShapeMismatch
from flatmorse.geometry import OperatorPair
from flatmorse.spectral import translation_field_residual


def test_zero_potential_gives_stiffness(d_coarse):
    J = assemble_jacobi(d_coarse.ops, np.zeros(d_coarse.mesh.n_vertices))
    assert (J.form != d_coarse.ops.stiffness).nnz == 0


def test_form_is_symmetric(d_coarse):
    J = d_coarse.jacobi
    assert (J.form != J.form.T).nnz == 0


def test_constant_gives_minus_total_curvature(d_coarse):
    J = d_coarse.jacobi
    total = float(np.sum(J.mass.diagonal() * J.a2))
    q = J.q(np.ones(J.size))
    assert q < 0
    assert q == pytest.approx(-total, rel=1e-10)


def test_bad_potential(d_coarse):
    with pytest.raises(ShapeMismatch):
        assemble_jacobi(d_coarse.ops, np.zeros(3))
    with pytest.raises(ValueError):
        assemble_jacobi(d_coarse.ops, -np.ones(d_coarse.mesh.n_vertices))


def test_flat_lowest_is_constant(flat_setup):
    s = eigen_lowest(flat_setup.jacobi, 4)
    assert abs(s.eigenvalues[0]) <= 1e-10 * abs(s.eigenvalues).max()
    v = s.eigenvectors[:, 0]
    np.testing.assert_allclose(v, v[0], rtol=1e-8)


def test_count_too_large(flat_setup):
    with pytest.raises(ShapeMismatch):
        eigen_lowest(flat_setup.jacobi, flat_setup.jacobi.size)


def test_dense_and_iterative_agree(d_coarse):
    a = eigen_lowest(d_coarse.jacobi, 10, method="dense").eigenvalues
    b = eigen_lowest(d_coarse.jacobi, 10, method="shift-invert").eigenvalues
    assert np.max(np.abs(a - b)) <= 1e-8 * np.abs(a).max()


def test_eigenvectors_are_mass_orthonormal(d_coarse):
    s = eigen_lowest(d_coarse.jacobi, 6)
    G = s.eigenvectors.T @ (d_coarse.jacobi.mass @ s.eigenvectors)
    np.testing.assert_allclose(G, np.eye(6), atol=1e-9)


def test_flat_index_is_zero(flat_setup):
    mi = morse_index(flat_setup.jacobi)
    assert mi.index == 0
    assert mi.negative_eigenvalues.size == 0


def test_coarse_d_has_one_clearly_negative_eigenvalue(d_coarse):
    # at this resolution the translation cluster sits near 2% of the scale
    mi = morse_index(d_coarse.jacobi, zero_tol=0.05)
    assert mi.index == 1
    assert mi.gap_ratio >= 10


def _diagonal_pair(eigs):
    n = len(eigs)
    ops = OperatorPair(sparse.diags(np.asarray(eigs, float)).tocsr(), sparse.diags(np.ones(n)))
    return assemble_jacobi(ops, np.zeros(n))


def test_eigenvalue_at_the_cut_is_ambiguous():
    pair = _diagonal_pair([-1.0, -0.0101, -0.0098, 0.2, 0.4, 0.6, 0.8, 1.0, 2.0, 3.0])
    with pytest.raises(IndexAmbiguous) as info:
        morse_index(pair, zero_tol=0.01, method="dense")
    assert set(info.value.candidates) == {1, 2}


def test_window_grows_until_a_nonnegative_eigenvalue():
    eigs = np.concatenate([-np.linspace(1, 2, 12), np.linspace(1, 3, 20)])
    mi = morse_index(_diagonal_pair(eigs), start=4, method="dense")
    assert mi.index == 12


def test_translation_residuals_on_flat(flat_setup):
    tr = translation_field_residual(flat_setup.normals, flat_setup.jacobi)
    J = flat_setup.jacobi
    scale = float(np.max(J.stiffness.diagonal() / J.mass.diagonal()))
    assert tr.residuals[2] <= 1e-14 * scale
    assert list(tr.degenerate) == [True, True, False]


def _relative_translation(run):
    tr = translation_field_residual(run.extras["normals"], run.extras["jacobi"])
    m = run.extras["jacobi"].mass.diagonal()
    return tr, tr.residuals.max() / (np.sum(m * run.shape.a2) / m.sum())


def test_translation_residuals_on_d():
    tr, rel = _relative_translation(_runs.pipeline_run("D", 64))
    assert not tr.degenerate.any()
    assert rel <= 1e-2


def test_translation_residuals_shrink_under_subdivision():
    study = _runs.refinement("D", 64)
    assert study.fine["translation"] < study.coarse["translation"]


def test_spectrum_json(flat_setup):
    import json

    s = eigen_lowest(flat_setup.jacobi, 3)
    d = json.loads(s.to_json())
    assert d["negative_count"] == 0 and len(d["eigenvalues"]) == 3

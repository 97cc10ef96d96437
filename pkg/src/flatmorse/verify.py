"""Test functions built from harmonic forms and the checks they feed.

For a harmonic 1-form ``omega`` on a minimal hypersurface with unit normal
``N`` in a flat torus, the functions ``u_ij = N_i w_j - N_j w_i`` (``w`` the
vector field dual to ``omega``) satisfy a Jacobi-type identity.  Summed
over all coordinate pairs their second variations cancel, which is what
ties the Morse index to the first Betti number.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.sparse.linalg import splu

from .errors import DegenerateTestSet, DegenerateTriangle, KernelAmbiguous, ShapeMismatch
from .geometry import ShapeField
from .hodge import HarmonicBasis, _barycentric_gradients, sharp_field
from .spectral import JacobiPair, SpectrumReport
from .torus import PeriodicMesh

__all__ = [
    "TestFunctionSet",
    "test_functions",
    "q_form",
    "WedgeResidual",
    "wedge_identity_residual",
    "wedge_identity_worst",
    "PointwiseResidual",
    "pointwise_identity_residual",
    "PhiKernel",
    "phi_kernel",
    "BoundReport",
    "bound_report",
]


@dataclass(frozen=True)
class TestFunctionSet:
    """``u_ij`` for ``i < j`` over the ambient coordinate axes."""

    __test__ = False  # not a pytest class

    pairs: tuple
    values: np.ndarray  # (n_pairs, V)
    sharp: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return len(self.pairs)

    def get(self, i: int, j: int) -> np.ndarray:
        """``u_ij``; swapping the indices flips the sign and ``u_ii = 0``."""
        if i == j:
            return np.zeros(self.values.shape[1])
        if i > j:
            return -self.get(j, i)
        return self.values[self.pairs.index((i, j))]


def _pairs(d):
    return tuple(itertools.combinations(range(d), 2))


def _as_sets(normals, sharp):
    normals = np.asarray(normals, dtype=float)
    sharp = np.asarray(sharp, dtype=float)
    if normals.shape != sharp.shape or normals.ndim != 2:
        raise ShapeMismatch(f"normals {normals.shape} and vector field {sharp.shape} differ")
    pairs = _pairs(normals.shape[1])
    vals = np.stack([normals[:, i] * sharp[:, j] - normals[:, j] * sharp[:, i] for i, j in pairs])
    return TestFunctionSet(pairs, vals, sharp, normals)


def test_functions(mesh: PeriodicMesh, omega, normals) -> TestFunctionSet:
    """Vertex fields ``u_ij = N_i w_j - N_j w_i`` with ``w`` dual to ``omega``.

    ``omega`` is an edge cochain; ``normals`` is ``(V, d)``.
    """
    normals = np.asarray(normals, dtype=float)
    if normals.shape != (mesh.n_vertices, mesh.dimension):
        raise ShapeMismatch(f"normals have shape {normals.shape}, expected {(mesh.n_vertices, mesh.dimension)}")
    if np.shape(omega) != (mesh.n_edges,):
        raise ShapeMismatch(f"cochain has shape {np.shape(omega)}, mesh has {mesh.n_edges} edges")
    return _as_sets(normals, sharp_field(mesh, omega, normals))


test_functions.__test__ = False


def q_form(pair: JacobiPair, u) -> float:
    """Second variation ``u^T (S - B) u``."""
    return pair.q(u)


@dataclass(frozen=True)
class WedgeResidual:
    total: float
    normalizer: float
    ratio: float
    terms: np.ndarray


def _negligible(pair: JacobiPair, values) -> float:
    """Round-off floor for ``u^T S u + u^T B u`` over a set of fields."""
    m = pair.mass.diagonal()
    scale = float(np.max(pair.stiffness.diagonal() / m)) + float(pair.a2.max())
    return 1e-12 * scale * float(sum(np.sum(m * u * u) for u in values))


def wedge_identity_residual(mesh: PeriodicMesh, omega, pair: JacobiPair, normals) -> WedgeResidual:
    """Sum of ``Q(u_ij, u_ij)`` over all pairs and its relative size.

    The normaliser is ``sum(u^T S u + u^T B u)``; ``ratio = |total| / normaliser``.
    When the normaliser is at round-off level (constant test functions on
    a flat torus) the ratio is 0 if the sum is too, else ``inf``.

    Raises
    ------
    DegenerateTestSet
        If every ``u_ij`` vanishes.
    """
    tf = test_functions(mesh, omega, normals)
    if not any(np.any(u != 0) for u in tf.values):
        raise DegenerateTestSet("all test functions vanish")
    terms = np.array([pair.q(u) for u in tf.values])
    B = pair.potential
    norm = float(sum(u @ (pair.stiffness @ u) + u @ (B @ u) for u in tf.values))
    total = float(terms.sum())
    floor = _negligible(pair, tf.values)
    if norm <= floor:
        ratio = 0.0 if abs(total) <= floor else np.inf
    else:
        ratio = abs(total) / norm
    return WedgeResidual(total, norm, ratio, terms)


def wedge_identity_worst(mesh: PeriodicMesh, basis: HarmonicBasis, pair: JacobiPair, normals) -> float:
    """Largest wedge ratio over all nonzero harmonic forms.

    Both the summed form and its normaliser are quadratic in the harmonic
    coefficients, so the maximum is a generalised eigenvalue and does not
    depend on the choice of basis.
    """
    sets = [test_functions(mesh, w, normals).values for w in basis.cochains.T]
    b = len(sets)
    B = pair.potential
    Qm = np.zeros((b, b))
    Nm = np.zeros((b, b))
    for a in range(b):
        for c in range(a, b):
            for u, v in zip(sets[a], sets[c]):
                Qm[a, c] += u @ (pair.form @ v)
                Nm[a, c] += u @ (pair.stiffness @ v) + u @ (B @ v)
            Qm[c, a], Nm[c, a] = Qm[a, c], Nm[a, c]
    floor = max(_negligible(pair, s) for s in sets)
    w, V = np.linalg.eigh(Nm)
    if w.max() <= floor:
        # flat case: every test function is constant
        return 0.0 if np.abs(Qm).max() <= floor else np.inf
    keep = w > 1e-12 * w.max()
    R = V[:, keep] / np.sqrt(w[keep])
    return float(np.max(np.abs(np.linalg.eigvalsh(R.T @ Qm @ R))))


@dataclass(frozen=True)
class PointwiseResidual:
    pair: tuple
    weak: np.ndarray  # residual tested against each hat function
    field: np.ndarray  # weak / lumped mass
    l2: float
    u_h1: float
    relative: float
    rhs_l2: float
    frame_deviation: float
    dual_relative: float  # H^-1 norm of the weak residual over ||u||_H1


def _face_source(mesh, sharp, shape_ops, frame=None):
    """Per-face ``sum_k A(E_k) (nabla_{E_k} w)^T`` as ``(F, d, d)`` matrices.

    With ``frame=None`` the sum over an orthonormal tangent frame is taken
    in closed form (``A P J^T P``); otherwise ``frame`` is ``(F, 2, d)`` and
    the sum is evaluated term by term.
    """
    grads, area = _barycentric_gradients(mesh)
    if np.any(area <= 1e-14 * area.mean()):
        raise DegenerateTriangle("zero-area face in residual assembly")
    f = mesh.faces
    # ambient derivative of the piecewise-linear field: J X = sum_i w_i <grad l_i, X>
    J = np.einsum("fkd,fke->fde", sharp[f], grads)
    n = np.cross(grads[:, 1], grads[:, 2])
    n /= np.linalg.norm(n, axis=1)[:, None]
    P = np.eye(mesh.dimension)[None] - n[:, :, None] * n[:, None, :]
    A = shape_ops[f].mean(axis=1)
    A = P @ A @ P
    if frame is None:
        return A @ P @ J.transpose(0, 2, 1) @ P
    out = np.zeros_like(A)
    for k in range(frame.shape[1]):
        e = frame[:, k]
        ae = np.einsum("fde,fe->fd", A, e)
        cov = np.einsum("fde,fe->fd", P, np.einsum("fde,fe->fd", J, e))
        out += ae[:, :, None] * cov[:, None, :]
    return out


def _face_frames(mesh, rng=None):
    ev = mesh.corner_vectors()
    e1 = ev[:, 0] / np.linalg.norm(ev[:, 0], axis=1)[:, None]
    n = np.cross(ev[:, 0], -ev[:, 2])
    n /= np.linalg.norm(n, axis=1)[:, None]
    e2 = np.cross(n, e1)
    if rng is not None:
        t = rng.uniform(0, 2 * np.pi, size=mesh.n_faces)[:, None]
        e1, e2 = np.cos(t) * e1 + np.sin(t) * e2, -np.sin(t) * e1 + np.cos(t) * e2
    return np.stack([e1, e2], axis=1)


def pointwise_identity_residual(mesh: PeriodicMesh, omega, pair_ij, shape: ShapeField, jacobi: JacobiPair,
                                *, seed: int = 0) -> PointwiseResidual:
    """Weak residual of ``Delta u + |A|^2 u + 2 sum A(E_k,E_l) <E_l ^ nabla_{E_k} omega, theta>``.

    ``theta = e_i ^ e_j`` for ``pair_ij = (i, j)``.  The Laplacian and
    potential enter through ``-(S - B) u``; the curvature source is taken
    face-wise (shape operator averaged over the corners, covariant
    derivative of the piecewise-linear dual field) and integrated against
    hat functions.  ``relative`` is the lumped ``L2`` norm of the residual
    over the ``H1`` norm of ``u_ij``; ``dual_relative`` measures the weak
    residual in the dual norm of ``H1`` instead, which is the norm in which
    the cotangent discretisation is consistent on irregular meshes.  The
    source is also evaluated in a randomly rotated tangent frame on every
    face; ``frame_deviation`` is the relative change.
    """
    i, j = pair_ij
    if not (0 <= i < mesh.dimension and 0 <= j < mesh.dimension and i != j):
        raise ShapeMismatch(f"invalid coordinate pair {pair_ij}")
    normals = shape.normals
    tf = test_functions(mesh, omega, normals)
    u = tf.get(i, j)
    src = _face_source(mesh, tf.sharp, shape.shape_operators)
    rot = _face_source(mesh, tf.sharp, shape.shape_operators, _face_frames(mesh, np.random.default_rng(seed)))
    t = src[:, i, j] - src[:, j, i]
    t_rot = rot[:, i, j] - rot[:, j, i]
    dev = float(np.linalg.norm(t - t_rot) / max(np.linalg.norm(t), np.finfo(float).tiny))
    area = mesh.face_areas()
    V = mesh.n_vertices
    lumped = np.zeros(V)
    for k in range(3):
        lumped += np.bincount(mesh.faces[:, k], weights=area * t / 3.0, minlength=V)
    weak = -(jacobi.form @ u) + 2.0 * lumped
    m = jacobi.mass.diagonal()
    l2 = float(np.sqrt(np.sum(weak * weak / m)))
    rhs = float(np.sqrt(np.sum(4.0 * lumped * lumped / m)))
    h1 = float(np.sqrt(u @ (jacobi.stiffness @ u) + np.sum(m * u * u)))
    rel = l2 / h1 if h1 > 0 else (0.0 if l2 == 0 else np.inf)
    riesz = _h1_solver(jacobi)(weak)
    dual = float(np.sqrt(max(weak @ riesz, 0.0)))
    drel = dual / h1 if h1 > 0 else (0.0 if dual == 0 else np.inf)
    return PointwiseResidual((i, j), weak, weak / m, l2, h1, rel, rhs, dev, drel)


def _h1_solver(jacobi):
    key = id(jacobi)
    hit = _H1_CACHE.get(key)
    if hit is None or hit[0] is not jacobi:
        lu = splu((jacobi.stiffness + jacobi.mass).tocsc())
        _H1_CACHE.clear()
        _H1_CACHE[key] = hit = (jacobi, lu.solve)
    return hit[1]


_H1_CACHE: dict = {}


@dataclass(frozen=True)
class PhiKernel:
    matrix: np.ndarray  # (n_pairs * k, b1)
    singular_values: np.ndarray  # length b1, padded with zeros
    kernel_dim: int
    gap_ratio: float
    tol: float


def phi_kernel(basis: HarmonicBasis, spectrum: SpectrumReport, mesh: PeriodicMesh, normals, index: int | None = None,
               *, tol: float = 1e-3, min_gap: float = 10.0) -> PhiKernel:
    """Matrix of ``int u_ij(omega) phi_q`` against the negative eigenfunctions.

    Rows run over pairs ``i < j`` (outer) and eigenfunctions ``q`` (inner);
    columns over the harmonic basis.  The kernel dimension counts singular
    values below ``tol * sigma_max``.  Singular values are padded with zeros
    to length ``b1``; the smallest kept one must exceed the largest
    discarded one (floored at ``eps * sigma_max``) by a factor ``min_gap``.

    Raises
    ------
    KernelAmbiguous
        No singular-value gap of at least ``min_gap`` at the cut.
    """
    if index is None:
        index = spectrum.negative_count
    phis = spectrum.eigenvectors[:, :index]
    b1 = basis.b1
    d = mesh.dimension
    pairs = _pairs(d)
    if index == 0:
        return PhiKernel(np.zeros((0, b1)), np.zeros(b1), b1, np.inf, tol)
    m = _lumped_mass(mesh)
    cols = []
    for w in basis.cochains.T:
        tf = test_functions(mesh, w, normals)
        cols.append((tf.values * m) @ phis)  # (pairs, k)
    Phi = np.stack([c.reshape(-1) for c in cols], axis=1)
    sv = np.linalg.svd(Phi, compute_uv=False)
    sv = np.concatenate([sv, np.zeros(max(b1 - sv.size, 0))])
    smax = sv[0] if sv.size else 0.0
    if smax == 0:
        return PhiKernel(Phi, sv, b1, np.inf, tol)
    rank = int(np.sum(sv > tol * smax))
    floor = np.finfo(float).eps * smax
    nxt = sv[rank] if rank < sv.size else 0.0
    ratio = float(sv[rank - 1] / max(nxt, floor))
    if ratio < min_gap:
        raise KernelAmbiguous(f"singular-value gap {ratio:.3g} < {min_gap} at rank {rank}")
    return PhiKernel(Phi, sv, b1 - rank, ratio, tol)


def _lumped_mass(mesh):
    area = mesh.face_areas()
    return np.bincount(mesh.faces.reshape(-1), weights=np.repeat(area / 3.0, 3), minlength=mesh.n_vertices)


@dataclass(frozen=True)
class BoundReport:
    bound: Fraction
    holds: bool
    sharp: bool

    @property
    def value(self) -> float:
        return float(self.bound)


def bound_report(index: int, b1: int, n: int) -> BoundReport:
    """``2 / (n (n + 1)) * (b1 - (2n - 1))`` in exact arithmetic.

    ``holds`` is ``index >= bound``; ``sharp`` is ``index == ceil(bound)``
    with a positive bound.
    """
    if index < 0 or b1 < 0:
        raise ValueError("index and b1 must be non-negative")
    if n < 2:
        raise ValueError("n must be at least 2")
    bound = Fraction(2, n * (n + 1)) * (b1 - (2 * n - 1))
    return BoundReport(bound, index >= bound, bound > 0 and index == math.ceil(bound))

"""Discrete harmonic 1-forms on periodic meshes.

Cochains live on the canonical edges of a :class:`PeriodicMesh`.  The
edge inner product is the Whitney-form mass matrix, so that
``d0.T @ M1 @ d0`` reproduces the cotangent stiffness exactly and the
discrete harmonic forms converge to smooth ones under refinement.
"""
from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import eigsh, splu

from .errors import BettiAmbiguous, DegenerateTriangle, TopologyMismatch
from .geometry import OperatorPair, assemble_laplace
from .torus import PeriodicMesh

__all__ = [
    "FormLaplacian",
    "HarmonicBasis",
    "assemble_form_laplacian",
    "whitney_mass",
    "barycentric_star",
    "harmonic_basis",
    "restrict_parallel",
    "face_circulation",
    "parallel_rank_check",
    "harmonic_projection",
    "whitney_face_vectors",
    "sharp_field",
    "write_cochain_csv",
    "harmonic_representative",
    "prolong_whitney",
]

logger = logging.getLogger(__name__)


def _barycentric_gradients(mesh, points=None):
    """``(F, 3, d)`` gradients of the three barycentric coordinates, and areas."""
    ev = mesh.corner_vectors(points)
    n = np.cross(ev[:, 0], -ev[:, 2])
    dbl = np.linalg.norm(n, axis=1)
    n = n / dbl[:, None]
    # gradient of lambda_k is perpendicular to the opposite edge, pointing at corner k
    opp = ev[:, [1, 2, 0]]
    grads = np.cross(n[:, None, :], opp) / dbl[:, None, None]
    return grads, 0.5 * dbl


def whitney_mass(mesh: PeriodicMesh, points=None):
    """Galerkin mass matrix of lowest-order Whitney 1-forms, ``(E, E)``."""
    grads, area = _barycentric_gradients(mesh, points)
    if np.any(area <= 1e-14 * area.mean()):
        raise DegenerateTriangle("zero-area face in Whitney mass assembly")
    g = np.einsum("fid,fjd->fij", grads, grads)
    mm = area[:, None, None] * (1.0 + np.eye(3))[None] / 12.0
    # local edge k runs from corner k to corner k+1
    a = np.arange(3)
    b = (a + 1) % 3
    # int W_ab . W_cd = m_ac g_bd - m_ad g_bc - m_bc g_ad + m_bd g_ac
    loc = (
        mm[:, a[:, None], a[None, :]] * g[:, b[:, None], b[None, :]]
        - mm[:, a[:, None], b[None, :]] * g[:, b[:, None], a[None, :]]
        - mm[:, b[:, None], a[None, :]] * g[:, a[:, None], b[None, :]]
        + mm[:, b[:, None], b[None, :]] * g[:, a[:, None], a[None, :]]
    )
    s = mesh.face_edge_signs.astype(float)
    loc = loc * s[:, :, None] * s[:, None, :]
    e = mesh.face_edges
    rows = np.repeat(e, 3, axis=1).reshape(-1)
    cols = np.tile(e, (1, 3)).reshape(-1)
    M1 = sparse.csr_matrix((loc.reshape(-1), (rows, cols)), shape=(mesh.n_edges,) * 2)
    M1.sum_duplicates()
    return ((M1 + M1.T) * 0.5).tocsr()


def barycentric_star(mesh: PeriodicMesh, points=None):
    """Diagonal Hodge star on edges from barycentric dual edges.

    Each adjacent face contributes the polyline edge-midpoint to face
    barycentre; the weight is its length over the primal length.
    """
    fc = mesh.face_coords(points)
    bary = fc.mean(axis=1)
    ev = mesh.corner_vectors(points)
    mid = fc + 0.5 * ev
    dual = np.linalg.norm(bary[:, None, :] - mid, axis=-1)
    length = np.linalg.norm(ev, axis=-1)
    w = np.bincount(mesh.face_edges.reshape(-1), weights=(dual / length).reshape(-1), minlength=mesh.n_edges)
    return sparse.diags(w)


@dataclass(frozen=True)
class FormLaplacian:
    """Weak 1-form Hodge Laplacian ``K`` with edge mass ``M1``.

    ``K = M1 d0 M0^-1 d0^T M1 + d1^T M2 d1``; its kernel is the space of
    discrete harmonic 1-forms.
    """

    operator: sparse.csr_matrix
    edge_mass: sparse.csr_matrix
    d0: sparse.csr_matrix
    d1: sparse.csr_matrix
    ops: OperatorPair
    star: str
    fallback: bool = False


def assemble_form_laplacian(mesh: PeriodicMesh, star: str = "whitney", ops: OperatorPair | None = None) -> FormLaplacian:
    """Assemble the weak Hodge Laplacian on 1-cochains.

    ``star`` selects the edge inner product: ``"whitney"`` (Galerkin mass),
    ``"circumcentric"`` (diagonal cotangent weights, replaced by barycentric
    weights with a warning when any weight is non-positive) or
    ``"barycentric"``.
    """
    if ops is None:
        ops = assemble_laplace(mesh)
    d0 = mesh.d0()
    d1 = mesh.d1()
    fallback = False
    if star == "whitney":
        M1 = whitney_mass(mesh)
    elif star == "circumcentric":
        from .geometry import edge_cotan_weights

        w = edge_cotan_weights(mesh)
        if np.any(w <= 0):
            warnings.warn(f"{int(np.sum(w <= 0))} non-positive cotangent weights; using barycentric star")
            M1 = barycentric_star(mesh).tocsr()
            fallback = True
        else:
            M1 = sparse.diags(w).tocsr()
    elif star == "barycentric":
        M1 = barycentric_star(mesh).tocsr()
    else:
        raise ValueError(f"unknown edge star {star!r}")
    area = mesh.face_areas()
    m0inv = sparse.diags(1.0 / ops.mass_diagonal)
    co = M1 @ d0
    K = co @ m0inv @ co.T + d1.T @ sparse.diags(1.0 / area) @ d1
    K = ((K + K.T) * 0.5).tocsr()
    return FormLaplacian(K, M1, d0.tocsr(), d1.tocsr(), ops, star, fallback)


@dataclass
class HarmonicBasis:
    cochains: np.ndarray  # (E, b1), columns are harmonic forms
    gram: np.ndarray
    eigenvalues: np.ndarray
    gap_ratio: float
    tol: float
    laplacian: FormLaplacian

    @property
    def b1(self) -> int:
        return self.cochains.shape[1]

    @property
    def gram_condition(self) -> float:
        return float(np.linalg.cond(self.gram)) if self.b1 else 1.0

    def residuals(self):
        """``||K w||_{M1^-1} / ||w||_{M1}`` for each member (dense-free estimate)."""
        K, M1 = self.laplacian.operator, self.laplacian.edge_mass
        out = []
        for w in self.cochains.T:
            kw = K @ w
            out.append(float(np.sqrt(kw @ kw) / np.sqrt(w @ (M1 @ w))))
        return np.array(out)


def _lowest_form_eigs(lap: FormLaplacian, k: int, seed: int):
    K, M1 = lap.operator, lap.edge_mass
    E = K.shape[0]
    if E <= 1500:
        lam, vec = scipy.linalg.eigh(K.toarray(), M1.toarray(), subset_by_index=[0, min(k, E) - 1])
        return lam, vec
    scale = float(np.max(K.diagonal() / M1.diagonal()))
    sigma = -1e-6 * scale
    v0 = np.random.default_rng(seed).standard_normal(E)
    lam, vec = eigsh(K.tocsc(), k=k, M=M1.tocsc(), sigma=sigma, which="LM", v0=v0, tol=1e-12)
    order = np.argsort(lam)
    return lam[order], vec[:, order]


def harmonic_basis(mesh: PeriodicMesh, tol: float = 1e-8, gap: float = 100.0, *, star: str = "whitney",
                   lap: FormLaplacian | None = None, seed: int = 0, check_topology: bool = True) -> HarmonicBasis:
    """Kernel of the 1-form Laplacian, found by a spectral gap.

    The number of eigenvalues below ``tol`` times the first clearly positive
    eigenvalue is taken as ``b1``; the gap between the ``b1``-th and the
    next eigenvalue must be at least ``gap``.  The count is checked against
    the combinatorial value ``2 - chi``.

    Raises
    ------
    BettiAmbiguous
        No eigenvalue ratio of at least ``gap`` separates the kernel.
    TopologyMismatch
        The spectral count disagrees with ``2 - chi``.
    """
    if lap is None:
        lap = assemble_form_laplacian(mesh, star=star)
    E = mesh.n_edges
    k = min(max(2 - mesh.euler_characteristic, 0) + 6, E - 1)
    while True:
        lam, vec = _lowest_form_eigs(lap, k, seed)
        pos = np.maximum(lam, 0.0)
        # first eigenvalue that stands clear of numerical zero
        big = np.flatnonzero(pos > tol * pos.max())
        if big.size and big[0] < k - 1 or k >= E - 1:
            break
        k = min(2 * k, E - 1)
    first = int(big[0]) if big.size else k
    b1 = int(np.sum(pos < tol * pos[first])) if big.size else k
    if b1 >= len(pos):
        raise BettiAmbiguous(f"all {len(pos)} computed eigenvalues fall below the kernel tolerance")
    below = pos[b1 - 1] if b1 > 0 else 0.0
    ratio = float(pos[b1] / below) if below > 0 else np.inf
    if ratio < gap:
        raise BettiAmbiguous(f"eigenvalue gap ratio {ratio:.3g} < {gap} at b1={b1}")
    if check_topology and b1 != 2 - mesh.euler_characteristic:
        raise TopologyMismatch(f"spectral b1={b1} but 2 - chi = {2 - mesh.euler_characteristic}")
    W = vec[:, :b1]
    gram = W.T @ (lap.edge_mass @ W)
    return HarmonicBasis(W, gram, lam, ratio, tol, lap)


def restrict_parallel(mesh: PeriodicMesh, covector) -> np.ndarray:
    """Cochain of the constant covector: ``<c, edge vector>`` on each edge."""
    c = np.asarray(covector, dtype=float)
    return mesh.edge_vectors() @ c


def face_circulation(mesh: PeriodicMesh, omega) -> np.ndarray:
    """Oriented sum of a cochain around each face (``d1 omega``)."""
    om = np.asarray(omega, dtype=float)
    return np.sum(om[mesh.face_edges] * mesh.face_edge_signs, axis=1)


def harmonic_projection(basis: HarmonicBasis, omega):
    """Edge-inner-product projection of ``omega`` onto the harmonic space."""
    M1 = basis.laplacian.edge_mass
    coeff = np.linalg.solve(basis.gram, basis.cochains.T @ (M1 @ omega))
    return basis.cochains @ coeff


@dataclass
class RankCheck:
    rank: int
    singular_values: np.ndarray
    tol: float


def parallel_rank_check(mesh: PeriodicMesh, basis: HarmonicBasis, tol: float = 1e-6) -> RankCheck:
    """Rank of the harmonic parts of the restricted coordinate 1-forms."""
    d = mesh.dimension
    proj = np.column_stack([harmonic_projection(basis, restrict_parallel(mesh, e)) for e in np.eye(d)])
    M1 = basis.laplacian.edge_mass
    gram = proj.T @ (M1 @ proj)
    sv = np.sqrt(np.maximum(np.linalg.eigvalsh(gram)[::-1], 0.0))
    if sv[0] == 0:
        return RankCheck(0, sv, tol)
    return RankCheck(int(np.sum(sv > tol * sv[0])), sv, tol)


def whitney_face_vectors(mesh: PeriodicMesh, omega, points=None):
    """Whitney interpolant of ``omega`` at each face barycentre, ``(F, d)``.

    For a cochain that is closed on the face this is the unique tangent
    vector whose pairing with every edge vector matches the cochain.
    """
    grads, area = _barycentric_gradients(mesh, points)
    if np.any(area <= 1e-14 * area.mean()):
        raise DegenerateTriangle("zero-area face in sharp")
    vals = np.asarray(omega, dtype=float)[mesh.face_edges] * mesh.face_edge_signs
    # W_ab at the barycentre is (grad l_b - grad l_a) / 3
    out = np.zeros((mesh.n_faces, mesh.dimension))
    for k in range(3):
        out += vals[:, k, None] * (grads[:, (k + 1) % 3] - grads[:, k]) / 3.0
    return out


def sharp_field(mesh: PeriodicMesh, omega, normals):
    """Per-vertex tangent vectors dual to ``omega``.

    Face vectors are averaged to vertices with area weights and projected
    onto the tangent plane of ``normals``.
    """
    fv = whitney_face_vectors(mesh, omega)
    area = mesh.face_areas()
    V = mesh.n_vertices
    acc = np.zeros((V, mesh.dimension))
    wsum = np.zeros(V)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], area[:, None] * fv)
        np.add.at(wsum, mesh.faces[:, k], area)
    v = acc / wsum[:, None]
    return v - np.einsum("vd,vd->v", v, normals)[:, None] * normals


def harmonic_representative(mesh: PeriodicMesh, omega, lap: FormLaplacian | None = None):
    """Harmonic member of the cohomology class of a closed cochain.

    Removes the exact part: ``omega - d0 f`` with ``S f = d0^T M1 omega``.
    The result is closed and co-closed in the edge inner product of
    ``lap``.
    """
    if lap is None:
        lap = assemble_form_laplacian(mesh)
    om = np.asarray(omega, dtype=float)
    rhs = lap.d0.T @ (lap.edge_mass @ om)
    S = lap.ops.stiffness.tocsc()
    # the constant is the only kernel; pin vertex 0
    f = np.zeros(mesh.n_vertices)
    f[1:] = splu(S[1:, 1:].tocsc()).solve(rhs[1:])
    return om - lap.d0 @ f


def prolong_whitney(coarse: PeriodicMesh, fine: PeriodicMesh, omega):
    """Transfer a cochain from ``coarse`` to ``fine = subdivide(coarse)``.

    Fine edge values are integrals of the coarse Whitney interpolant, so
    closed cochains stay closed and cohomology classes are preserved.
    """
    F = coarse.n_faces
    if fine.n_faces != 4 * F or fine.n_vertices != coarse.n_vertices + coarse.n_edges:
        raise ValueError("fine mesh is not a subdivision of the coarse mesh")
    loc = np.asarray(omega, dtype=float)[coarse.face_edges] * coarse.face_edge_signs  # (F, 3)
    I = np.eye(3)
    mid = [(I[0] + I[1]) / 2, (I[1] + I[2]) / 2, (I[2] + I[0]) / 2]
    # corner barycentres of the four children, in the order used by subdivide
    kids = [
        (I[0], mid[0], mid[2]),
        (mid[0], I[1], mid[1]),
        (mid[2], mid[1], I[2]),
        (mid[0], mid[1], mid[2]),
    ]
    out = np.zeros(fine.n_edges)
    for c, tri in enumerate(kids):
        for k in range(3):
            p, q = tri[k], tri[(k + 1) % 3]
            lam, dl = (p + q) / 2, q - p
            # integral of W_ij along the segment: lam_i d_j - lam_j d_i
            w = np.array([lam[i] * dl[(i + 1) % 3] - lam[(i + 1) % 3] * dl[i] for i in range(3)])
            val = loc @ w
            rows = slice(c * F, (c + 1) * F)
            out[fine.face_edges[rows, k]] = val * fine.face_edge_signs[rows, k]
    return out


def write_cochain_csv(mesh: PeriodicMesh, omega, path):
    """One row per canonical edge: id, tail, head, value."""
    from .meshfile import atomic_write

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["edge", "tail", "head", "value"])
    for i, ((a, b), val) in enumerate(zip(mesh.edges.tolist(), np.asarray(omega).tolist())):
        w.writerow([i, a, b, f"{val:.17g}"])
    atomic_write(path, buf.getvalue())

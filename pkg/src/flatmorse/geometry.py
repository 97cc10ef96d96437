"""Normals, shape operator, cotangent operators and angle defects."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DegenerateNeighborhood, DegenerateTriangle, NotOrientable
from .torus import PeriodicMesh

__all__ = [
    "OperatorPair",
    "ShapeField",
    "corner_angles",
    "vertex_normals",
    "face_normals",
    "assemble_laplace",
    "shape_field",
    "gauss_defect",
    "mean_curvature",
    "curvature_separation_threshold",
]


@dataclass(frozen=True)
class OperatorPair:
    """Cotangent stiffness ``S`` and lumped (barycentric) mass ``M``."""

    stiffness: sparse.csr_matrix
    mass: sparse.dia_matrix

    @property
    def mass_diagonal(self):
        return self.mass.diagonal()

    @property
    def total_area(self) -> float:
        return float(self.mass.diagonal().sum())


@dataclass(frozen=True)
class ShapeField:
    normals: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    shape_operators: np.ndarray  # (V, 3, 3) ambient, symmetric, tangent
    fit_rings: np.ndarray

    @property
    def a2(self):
        return self.k1**2 + self.k2**2

    @property
    def mean_curvature(self):
        return self.k1 + self.k2

    @property
    def separation(self):
        return self.k2 - self.k1

    def hypothesis_holds(self, threshold: float) -> bool:
        """Whether some vertex has clearly distinct principal curvatures."""
        return bool(np.any(self.separation > threshold))


def _cross(a, b):
    return np.cross(a, b)


def corner_angles(mesh: PeriodicMesh, points=None):
    """Interior angle at each face corner, shape ``(F, 3)``."""
    ev = mesh.corner_vectors(points)
    u = ev
    v = -np.roll(ev, 1, axis=1)  # corner k: edge k and reversed edge k-1
    dot = np.einsum("fkd,fkd->fk", u, v)
    crs = np.linalg.norm(_cross(u, v), axis=-1)
    return np.arctan2(crs, dot)


def face_normals(mesh: PeriodicMesh, points=None, unit=True):
    ev = mesh.corner_vectors(points)
    n = _cross(ev[:, 0], -ev[:, 2])
    if unit:
        n = n / np.linalg.norm(n, axis=1, keepdims=True)
    return n


def _check_oriented(mesh):
    signed = np.bincount(
        mesh.face_edges.reshape(-1),
        weights=mesh.face_edge_signs.reshape(-1),
        minlength=mesh.n_edges,
    )
    if np.any(signed != 0):
        raise NotOrientable("face orientations are not coherent")


def vertex_normals(mesh: PeriodicMesh, points=None, check=True):
    """Angle-weighted unit vertex normals from the oriented faces."""
    if check:
        _check_oriented(mesh)
    fn = face_normals(mesh, points)
    ang = corner_angles(mesh, points)
    n = np.zeros((mesh.n_vertices, mesh.dimension))
    for k in range(3):
        np.add.at(n, mesh.faces[:, k], ang[:, k, None] * fn)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return n


def _cotangents(ev):
    u = ev
    v = -np.roll(ev, 1, axis=1)
    dot = np.einsum("fkd,fkd->fk", u, v)
    crs = np.linalg.norm(_cross(u, v), axis=-1)
    return dot / crs


def assemble_laplace(mesh: PeriodicMesh, points=None, check=True) -> OperatorPair:
    """Cotangent stiffness and barycentric lumped mass.

    ``phi @ S @ phi`` is the Dirichlet energy of the piecewise-linear
    interpolant of ``phi``; ``M`` carries one third of each incident
    triangle's area.
    """
    ev = mesh.corner_vectors(points)
    area = 0.5 * np.linalg.norm(_cross(ev[:, 0], -ev[:, 2]), axis=1)
    if check and area.size and np.any(area < 1e-14 * area.mean()):
        bad = int(np.argmin(area))
        raise DegenerateTriangle(f"face {bad} has area {area[bad]:.3g}")
    cot = _cotangents(ev)
    f = mesh.faces
    V = mesh.n_vertices
    # corner k is opposite edge (k+1, k+2)
    i = np.concatenate([f[:, (k + 1) % 3] for k in range(3)])
    j = np.concatenate([f[:, (k + 2) % 3] for k in range(3)])
    w = 0.5 * np.concatenate([cot[:, k] for k in range(3)])
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([-w, -w, w, w])
    S = sparse.csr_matrix((vals, (rows, cols)), shape=(V, V))
    S.sum_duplicates()
    m = np.bincount(f.reshape(-1), weights=np.repeat(area / 3.0, 3), minlength=V)
    return OperatorPair(S, sparse.diags(m))


def mean_curvature(mesh: PeriodicMesh, normals=None, points=None, ops=None):
    """Pointwise mean curvature ``k1 + k2`` from the discrete area gradient.

    The cotangent formula gives the exact gradient of the polyhedral area;
    dividing its normal part by the lumped mass yields ``H`` with the sign
    convention ``A(X, Y) = <D_X Y, N>`` (a sphere with outward normal has
    negative ``H``).
    """
    if ops is None:
        ops = assemble_laplace(mesh, points, check=False)
    if normals is None:
        normals = vertex_normals(mesh, points, check=False)
    grad = _area_gradient(mesh, ops, points)
    return -np.einsum("vd,vd->v", grad, normals) / ops.mass_diagonal


def _area_gradient(mesh, ops=None, points=None):
    """Gradient of the polyhedral area with respect to each vertex position."""
    p = mesh.points if points is None else points
    E = mesh.edges
    ev = mesh.edge_vectors(p)
    w = _edge_weight(mesh, points=p)
    g = np.zeros_like(p)
    np.add.at(g, E[:, 0], -w[:, None] * ev)
    np.add.at(g, E[:, 1], w[:, None] * ev)
    return g


def _edge_weight(mesh, ops=None, points=None):
    """Cotangent weight ``(cot a + cot b) / 2`` per canonical edge."""
    ev = mesh.corner_vectors(points)
    cot = _cotangents(ev)
    # corner k is opposite the face edge (k+1) -> (k+2), i.e. face edge slot k+1
    slot_edges = mesh.face_edges[:, [1, 2, 0]]
    return 0.5 * np.bincount(slot_edges.reshape(-1), weights=cot.reshape(-1), minlength=mesh.n_edges)


def edge_cotan_weights(mesh: PeriodicMesh, points=None):
    return _edge_weight(mesh, points=points)


# -- shape operator -----------------------------------------------------


def _directed_edges(mesh):
    """Both orientations of every edge with their geometric vectors."""
    E = mesh.edges
    ev = mesh.edge_vectors()
    sh = mesh.edge_shifts
    tail = np.concatenate([E[:, 0], E[:, 1]])
    head = np.concatenate([E[:, 1], E[:, 0]])
    vec = np.concatenate([ev, -ev])
    shift = np.concatenate([sh, -sh])
    return tail, head, vec, shift


def _rings(mesh, depth):
    """Neighbourhood offsets ``(center, vector)`` up to ``depth`` edges away.

    Each neighbour copy (vertex id plus lattice shift) is listed once; the
    centre itself is excluded.
    """
    tail, head, vec, shift = _directed_edges(mesh)
    order = np.argsort(tail, kind="stable")
    tail, head, vec, shift = tail[order], head[order], vec[order], shift[order]
    starts = np.searchsorted(tail, np.arange(mesh.n_vertices + 1))
    c, w, s, r = tail, head, shift, vec
    for _ in range(depth - 1):
        deg = starts[w + 1] - starts[w]
        rep = np.repeat(np.arange(len(c)), deg)
        first = np.repeat(starts[w], deg)
        offset = np.arange(deg.sum()) - np.repeat(np.cumsum(deg) - deg, deg)
        idx = first + offset
        cc = np.concatenate([c, c[rep]])
        ww = np.concatenate([w, head[idx]])
        ss = np.concatenate([s, s[rep] + shift[idx]])
        rr = np.concatenate([r, r[rep] + vec[idx]])
        keys = np.column_stack([cc, ww, ss])
        _, keep = np.unique(keys, axis=0, return_index=True)
        keep = keep[~((cc[keep] == ww[keep]) & np.all(ss[keep] == 0, axis=1))]
        c, w, s, r = cc[keep], ww[keep], ss[keep], rr[keep]
    return c, r


def _tangent_frames(normals):
    n = normals
    helper = np.where(np.abs(n[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return t1, t2


def _fit_quadrics(center, rel, normals, t1, t2, V):
    x = np.einsum("id,id->i", rel, t1[center])
    y = np.einsum("id,id->i", rel, t2[center])
    z = np.einsum("id,id->i", rel, normals[center])
    # scale-free conditioning: normalise by the neighbourhood radius
    rad = np.sqrt(np.bincount(center, x * x + y * y, minlength=V) / np.maximum(np.bincount(center, minlength=V), 1))
    rad = np.where(rad > 0, rad, 1.0)
    xs, ys, zs = x / rad[center], y / rad[center], z / rad[center]
    basis = np.stack([xs * xs, xs * ys, ys * ys, xs, ys], axis=1)
    ata = np.zeros((V, 5, 5))
    atb = np.zeros((V, 5))
    for a in range(5):
        atb[:, a] = np.bincount(center, basis[:, a] * zs, minlength=V)
        for b in range(a, 5):
            val = np.bincount(center, basis[:, a] * basis[:, b], minlength=V)
            ata[:, a, b] = val
            ata[:, b, a] = val
    ev = np.linalg.eigvalsh(ata)
    ok = ev[:, 0] > 1e-8 * np.maximum(ev[:, -1], 1e-300)
    coef = np.zeros((V, 5))
    if ok.any():
        coef[ok] = np.linalg.solve(ata[ok], atb[ok][..., None])[..., 0]
    # undo the scaling: z = a x^2 + ... with x in length units
    coef[:, :3] /= rad[:, None]
    return coef, ok


def shape_field(mesh: PeriodicMesh, normals=None) -> ShapeField:
    """Principal curvatures from a least-squares height-function fit.

    Around each vertex the two-ring (three-ring where the two-ring does not
    determine a quadric) is written as a graph ``z = h(x, y)`` over the
    tangent plane of the vertex normal.  The fitted Hessian and slope give
    the second fundamental form with respect to ``normals``.
    """
    if normals is None:
        normals = vertex_normals(mesh)
    V = mesh.n_vertices
    t1, t2 = _tangent_frames(normals)
    coef = np.zeros((V, 5))
    rings = np.zeros(V, dtype=np.int64)
    todo = np.ones(V, dtype=bool)
    for depth in (2, 3):
        center, rel = _rings(mesh, depth)
        c, ok = _fit_quadrics(center, rel, normals, t1, t2, V)
        take = todo & ok
        coef[take] = c[take]
        rings[take] = depth
        todo &= ~ok
        if not todo.any():
            break
    if todo.any():
        raise DegenerateNeighborhood(f"{int(todo.sum())} vertices have rank-deficient fits")
    a, b, cc, d, e = coef.T
    g = np.stack([d, e], axis=1)
    hess = np.stack([np.stack([2 * a, b], -1), np.stack([b, 2 * cc], -1)], -2)
    w = np.sqrt(1.0 + d * d + e * e)
    second = hess / w[:, None, None]
    first = np.eye(2)[None] + g[:, :, None] * g[:, None, :]
    # symmetric form of first^{-1} second
    lam, vec = np.linalg.eigh(first)
    isq = vec @ (vec.transpose(0, 2, 1) / np.sqrt(lam)[:, :, None])
    sym = isq @ second @ isq
    k = np.linalg.eigvalsh(sym)
    # ambient tensor in the (t1, t2) plane; the tiny slope tilt is dropped
    inv1 = np.linalg.inv(first)
    shape2 = inv1 @ second @ inv1
    shape2 = 0.5 * (shape2 + shape2.transpose(0, 2, 1))
    T = np.stack([t1, t2], axis=2)  # (V, 3, 2)
    amb = T @ shape2 @ T.transpose(0, 2, 1)
    return ShapeField(
        normals=normals,
        k1=k[:, 0],
        k2=k[:, 1],
        shape_operators=amb,
        fit_rings=rings,
    )


def curvature_separation_threshold(mesh: PeriodicMesh, factor: float = 1e-3) -> float:
    return factor / mesh.mean_edge_length()


@dataclass(frozen=True)
class GaussDefect:
    defect: np.ndarray
    curvature: np.ndarray

    @property
    def total(self) -> float:
        return float(self.defect.sum())


def gauss_defect(mesh: PeriodicMesh, ops: OperatorPair | None = None) -> GaussDefect:
    """Angle defect ``2 pi - sum of angles`` per vertex and its density."""
    ang = corner_angles(mesh)
    s = np.bincount(mesh.faces.reshape(-1), weights=ang.reshape(-1), minlength=mesh.n_vertices)
    defect = 2 * np.pi - s
    if ops is None:
        ops = assemble_laplace(mesh, check=False)
    return GaussDefect(defect=defect, curvature=defect / ops.mass_diagonal)

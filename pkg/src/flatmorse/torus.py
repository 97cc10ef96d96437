"""Flat tori ``R^d / Γ`` and closed triangle meshes living in them.

A :class:`PeriodicMesh` stores every vertex once, inside the half-open
fundamental cell, and records on each directed edge the integer lattice
translation that carries the head's representative to the copy adjacent
to the tail.  Geometric edge vectors are therefore exact and never see
wrap-around error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateLattice, InvalidHandle, InvalidMesh

__all__ = [
    "Lattice",
    "make_lattice",
    "cubic_lattice",
    "wrap_point",
    "PeriodicMesh",
    "MeshDiagnostics",
    "validate_mesh",
    "edge_vector",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Lattice:
    """Full-rank lattice given by the columns of ``basis``."""

    basis: np.ndarray
    inverse: np.ndarray = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.basis.shape[0]

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.basis)))

    def to_lattice(self, p):
        """Cartesian points ``(..., d)`` to lattice coordinates."""
        return np.asarray(p, dtype=float) @ self.inverse.T

    def to_cartesian(self, u):
        return np.asarray(u, dtype=float) @ self.basis.T

    def translate(self, shifts):
        """Cartesian translation vectors for integer shifts ``(..., d)``."""
        return np.asarray(shifts, dtype=float) @ self.basis.T

    def __eq__(self, other):
        return isinstance(other, Lattice) and np.array_equal(self.basis, other.basis)

    def __hash__(self):
        return hash(self.basis.tobytes())


def make_lattice(basis) -> Lattice:
    """Build a lattice from a square matrix whose columns generate it.

    Raises
    ------
    DegenerateLattice
        If the matrix is not square, has fewer than 2 rows, or is singular
        relative to the size of its columns.
    """
    b = np.asarray(basis, dtype=float)
    if b.ndim != 2 or b.shape[0] != b.shape[1] or b.shape[0] < 2:
        raise DegenerateLattice(f"basis must be a square matrix of size >= 2, got {b.shape}")
    if not np.all(np.isfinite(b)):
        raise DegenerateLattice("basis has non-finite entries")
    d = b.shape[0]
    col = np.linalg.norm(b, axis=0)
    det = np.linalg.det(b)
    scale = np.prod(col) if np.all(col > 0) else 0.0
    if scale == 0.0 or abs(det) <= 64 * d * np.finfo(float).eps * scale:
        raise DegenerateLattice(f"singular lattice basis (det={det:.3g})")
    return Lattice(_frozen(b), _frozen(np.linalg.inv(b)))


def cubic_lattice(side: float = 2 * np.pi, dim: int = 3) -> Lattice:
    return make_lattice(side * np.eye(dim))


def wrap_point(lat: Lattice, p):
    """Return ``(representative, shift)`` with ``p = representative + basis @ shift``.

    The representative has lattice coordinates in ``[0, 1)``.  Works on a
    single point or on an array of points with the coordinate axis last.
    """
    u = lat.to_lattice(p)
    shift = np.floor(u)
    frac = u - shift
    # rounding can push a tiny negative fraction up to exactly 1.0
    hit = frac >= 1.0
    frac = np.where(hit, 0.0, frac)
    shift = shift + hit
    return lat.to_cartesian(frac), shift.astype(np.int64)


class PeriodicMesh:
    """Closed triangle mesh in a flat torus.

    Parameters
    ----------
    points : (V, d) array
        Cartesian vertex positions; they are wrapped into the fundamental
        cell on construction (shifts are adjusted to compensate).
    faces : (F, 3) int array
        Oriented vertex triples.
    face_shifts : (F, 3, d) int array
        ``face_shifts[f, k]`` is the lattice shift of the directed edge
        ``faces[f, k] -> faces[f, (k + 1) % 3]``.
    lattice : Lattice
    """

    def __init__(self, points, faces, face_shifts, lattice: Lattice):
        pts = np.asarray(points, dtype=float)
        fcs = np.asarray(faces, dtype=np.int64)
        sh = np.asarray(face_shifts, dtype=np.int64)
        d = lattice.dimension
        if pts.ndim != 2 or pts.shape[1] != d:
            raise InvalidMesh(f"points must have shape (V, {d})")
        if fcs.ndim != 2 or fcs.shape[1] != 3:
            raise InvalidMesh("faces must have shape (F, 3)")
        if sh.shape != (len(fcs), 3, d):
            raise InvalidMesh(f"face_shifts must have shape ({len(fcs)}, 3, {d})")
        if len(fcs) and (fcs.min() < 0 or fcs.max() >= len(pts)):
            raise InvalidMesh("face references a missing vertex")
        rep, t = wrap_point(lattice, pts)
        if np.any(t):
            # p = rep + B t, so an edge a->b gains t_b - t_a
            sh = sh + t[np.roll(fcs, -1, axis=1)] - t[fcs]
        self.lattice = lattice
        self.points = _frozen(rep)
        self.faces = _frozen(fcs, np.int64)
        self.face_shifts = _frozen(sh, np.int64)
        self._build_edges()

    # -- connectivity -------------------------------------------------
    def _build_edges(self):
        F = len(self.faces)
        d = self.lattice.dimension
        tail = self.faces.reshape(-1)
        head = np.roll(self.faces, -1, axis=1).reshape(-1)
        s = self.face_shifts.reshape(-1, d)
        # canonical direction: smaller vertex id first; ties broken by shift sign
        first_nz = np.argmax(s != 0, axis=1)
        lead = s[np.arange(len(s)), first_nz]
        flip = (tail > head) | ((tail == head) & (lead < 0))
        a = np.where(flip, head, tail)
        b = np.where(flip, tail, head)
        cs = np.where(flip[:, None], -s, s)
        keys = np.column_stack([a, b, cs])
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        self.edges = _frozen(uniq[:, :2], np.int64)
        self.edge_shifts = _frozen(uniq[:, 2:], np.int64)
        self.face_edges = _frozen(inv.reshape(F, 3), np.int64)
        self.face_edge_signs = _frozen(np.where(flip, -1, 1).reshape(F, 3), np.int64)
        self._lookup = None

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def dimension(self) -> int:
        return self.lattice.dimension

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def d0(self):
        """Signed vertex-edge incidence ``(E, V)``: ``(d0 f)_e = f(head) - f(tail)``."""
        E = self.n_edges
        rows = np.repeat(np.arange(E), 2)
        cols = self.edges.reshape(-1)
        vals = np.tile([-1.0, 1.0], E)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(E, self.n_vertices))

    def d1(self):
        """Signed edge-face incidence ``(F, E)`` following face orientation."""
        F = self.n_faces
        rows = np.repeat(np.arange(F), 3)
        return sparse.csr_matrix(
            (self.face_edge_signs.reshape(-1).astype(float), (rows, self.face_edges.reshape(-1))),
            shape=(F, self.n_edges),
        )

    # -- geometry -----------------------------------------------------
    def corner_vectors(self, points=None):
        """Edge vectors ``(F, 3, d)``; entry ``k`` runs from corner ``k`` to ``k+1``."""
        p = self.points if points is None else points
        f = self.faces
        nxt = np.roll(f, -1, axis=1)
        return p[nxt] + self.lattice.translate(self.face_shifts) - p[f]

    def face_coords(self, points=None):
        """Unwrapped corner positions ``(F, 3, d)`` anchored at corner 0."""
        p = self.points if points is None else points
        ev = self.corner_vectors(p)
        x0 = p[self.faces[:, 0]]
        return np.stack([x0, x0 + ev[:, 0], x0 - ev[:, 2]], axis=1)

    def edge_vectors(self, points=None):
        """Vectors of the canonical edges ``(E, d)``, tail to head."""
        p = self.points if points is None else points
        return p[self.edges[:, 1]] + self.lattice.translate(self.edge_shifts) - p[self.edges[:, 0]]

    def face_areas(self, points=None):
        ev = self.corner_vectors(points)
        return 0.5 * _wedge_norm(ev[:, 0], -ev[:, 2])

    def area(self, points=None) -> float:
        return float(self.face_areas(points).sum())

    def mean_edge_length(self) -> float:
        return float(np.linalg.norm(self.edge_vectors(), axis=1).mean())

    def edge_shift(self, tail: int, head: int):
        """Shift of the directed edge ``tail -> head``.

        Raises :class:`InvalidHandle` when no such edge exists or when the
        pair is joined by more than one edge (distinct shifts).
        """
        if self._lookup is None:
            lk = {}
            for (a, b), s in zip(self.edges.tolist(), self.edge_shifts.tolist()):
                lk.setdefault((a, b), []).append(tuple(s))
            self._lookup = lk
        tail, head = int(tail), int(head)
        if (tail, head) in self._lookup:
            cands, sign = self._lookup[(tail, head)], 1
        elif (head, tail) in self._lookup:
            cands, sign = self._lookup[(head, tail)], -1
        else:
            raise InvalidHandle(f"no edge {tail}->{head}")
        if len(cands) != 1:
            raise InvalidHandle(f"edge {tail}->{head} is ambiguous ({len(cands)} shifts)")
        return sign * np.array(cands[0], dtype=np.int64)

    def with_points(self, points) -> "PeriodicMesh":
        """Same connectivity with vertices moved to ``points`` (unwrapped allowed)."""
        return PeriodicMesh(points, self.faces, self.face_shifts, self.lattice)

    def with_faces_reversed(self) -> "PeriodicMesh":
        f = self.faces[:, ::-1]
        # (v2, v1, v0): edges v2->v1, v1->v0, v0->v2 reverse old edges 1, 0, 2
        s = -self.face_shifts[:, [1, 0, 2]]
        return PeriodicMesh(self.points, f, s, self.lattice)

    def __repr__(self):
        return (
            f"PeriodicMesh(V={self.n_vertices}, E={self.n_edges}, F={self.n_faces}, "
            f"chi={self.euler_characteristic})"
        )


def _wedge_norm(a, b):
    if a.shape[-1] == 3:
        return np.linalg.norm(np.cross(a, b), axis=-1)
    aa = np.einsum("...i,...i", a, a)
    bb = np.einsum("...i,...i", b, b)
    ab = np.einsum("...i,...i", a, b)
    return np.sqrt(np.maximum(aa * bb - ab * ab, 0.0))


def edge_vector(mesh: PeriodicMesh, tail: int, head: int):
    """Geometric vector of the directed edge ``tail -> head``."""
    s = mesh.edge_shift(tail, head)
    return mesh.points[head] + mesh.lattice.translate(s) - mesh.points[tail]


@dataclass
class MeshDiagnostics:
    manifold: bool
    oriented: bool
    orientable: bool
    shift_consistent: bool
    connected: bool
    euler_characteristic: int
    genus: int | None
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (
            self.manifold
            and self.oriented
            and self.shift_consistent
            and self.connected
            and not self.failures
        )


def validate_mesh(mesh: PeriodicMesh) -> MeshDiagnostics:
    """Check the closed-surface invariants without raising.

    Reports edge and vertex manifoldness, whether the stored orientation is
    coherent (and, failing that, whether any coherent one exists), whether
    every face closes up in the universal cover, and the Euler
    characteristic and genus.
    """
    failures = []
    F, E, V = mesh.n_faces, mesh.n_edges, mesh.n_vertices
    chi = mesh.euler_characteristic

    sums = mesh.face_shifts.sum(axis=1)
    bad_faces = np.flatnonzero(np.any(sums != 0, axis=1))
    shift_ok = bad_faces.size == 0
    if not shift_ok:
        failures.append(f"{bad_faces.size} faces whose shifts do not sum to zero (first: {bad_faces[0]})")

    fe = mesh.face_edges.reshape(-1)
    count = np.bincount(fe, minlength=E)
    edge_manifold = bool(np.all(count == 2))
    if not edge_manifold:
        failures.append(
            f"{int(np.sum(count != 2))} edges not shared by exactly two faces "
            f"(max incidence {int(count.max()) if E else 0})"
        )
    loops = np.flatnonzero(mesh.edges[:, 0] == mesh.edges[:, 1])
    if loops.size:
        failures.append(f"{loops.size} self-loop edges")
    f = mesh.faces
    repeated = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
    if repeated.size:
        failures.append(f"{repeated.size} faces with a repeated vertex")

    signs = mesh.face_edge_signs.reshape(-1)
    signed = np.bincount(fe, weights=signs, minlength=E)
    oriented = edge_manifold and bool(np.all(signed == 0))

    vertex_manifold = True
    orientable = oriented
    if edge_manifold and not loops.size and not repeated.size:
        vertex_manifold = _vertex_fans_ok(mesh)
        if not vertex_manifold:
            failures.append("vertex whose incident faces do not form a single fan")
        if not oriented:
            orientable = _orientation_exists(mesh)
    else:
        vertex_manifold = False
    manifold = edge_manifold and vertex_manifold and not loops.size and not repeated.size
    if manifold and not oriented:
        failures.append("face orientation is not coherent" + ("" if orientable else "; surface is not orientable"))

    ncomp = connected_components(
        sparse.csr_matrix((np.ones(E), (mesh.edges[:, 0], mesh.edges[:, 1])), shape=(V, V)),
        directed=False,
    )[0] if V else 0
    connected = ncomp == 1
    if not connected:
        failures.append(f"surface has {ncomp} connected components")

    genus = None
    if manifold and orientable and connected and chi % 2 == 0:
        genus = (2 - chi) // 2
    if chi % 2 and manifold and orientable:
        failures.append("odd Euler characteristic on an orientable surface")
    return MeshDiagnostics(
        manifold=manifold,
        oriented=oriented,
        orientable=orientable,
        shift_consistent=shift_ok,
        connected=connected,
        euler_characteristic=int(chi),
        genus=genus,
        failures=failures,
    )


def _edge_face_pairs(mesh):
    """For each edge, the two (face, corner) slots that use it."""
    fe = mesh.face_edges.reshape(-1)
    order = np.argsort(fe, kind="stable")
    slots = order.reshape(-1, 2)
    return slots // 3, slots % 3


def _vertex_fans_ok(mesh) -> bool:
    # corners at the same vertex are linked through each shared edge; a
    # manifold vertex has all its corners in one linked component
    F = mesh.n_faces
    (f1, f2), (k1, k2) = (a.T for a in _edge_face_pairs(mesh))
    faces = mesh.faces
    rows, cols = [], []
    for end in (0, 1):
        v = faces[f1, (k1 + end) % 3]
        # the same vertex sits in face f2 either at k2 or k2+1
        at_k2 = faces[f2, k2] == v
        c2 = np.where(at_k2, k2, (k2 + 1) % 3)
        rows.append(f1 * 3 + (k1 + end) % 3)
        cols.append(f2 * 3 + c2)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    g = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(3 * F, 3 * F))
    ncomp = connected_components(g, directed=False)[0]
    used = np.unique(faces).size
    return ncomp == used


def _orientation_exists(mesh) -> bool:
    F = mesh.n_faces
    (f1, f2), (k1, k2) = (a.T for a in _edge_face_pairs(mesh))
    s1 = mesh.face_edge_signs[f1, k1]
    s2 = mesh.face_edge_signs[f2, k2]
    # same sign => the two faces must have opposite flip states
    parity = (s1 == s2).astype(np.int64)
    flip = -np.ones(F, dtype=np.int64)
    adj = [[] for _ in range(F)]
    for a, b, p in zip(f1.tolist(), f2.tolist(), parity.tolist()):
        adj[a].append((b, p))
        adj[b].append((a, p))
    for start in range(F):
        if flip[start] >= 0:
            continue
        flip[start] = 0
        stack = [start]
        while stack:
            a = stack.pop()
            for b, p in adj[a]:
                want = flip[a] ^ p
                if flip[b] < 0:
                    flip[b] = want
                    stack.append(b)
                elif flip[b] != want:
                    return False
    return True

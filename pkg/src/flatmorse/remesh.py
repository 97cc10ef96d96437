"""Isotropic remeshing of periodic triangle meshes.

Marching cubes leaves slivers and strongly varying vertex density, which
makes pointwise quantities (angle defects, second differences of vertex
fields) noisy.  :func:`isotropic_remesh` alternates edge splits, edge
collapses, valence-improving flips and tangential smoothing, optionally
projecting vertices back onto an implicit surface after every smoothing
pass.

Every face stores one integer lattice offset per corner, so a corner sits
at ``points[v] + basis @ offset``.  Only offset differences matter, which
lets each local operation work in the frame of one face.
"""
from __future__ import annotations

import logging
import math

import numpy as np

from .errors import InvalidMesh
from .torus import PeriodicMesh, validate_mesh

__all__ = ["isotropic_remesh", "target_edge_length"]

logger = logging.getLogger(__name__)


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


_ZERO = (0, 0, 0)


def _cross(u, v):
    return (u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0])


def _dot(u, v):
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


def _normal(p, q, r):
    return _cross(_sub(q, p), _sub(r, p))


def _angle(apex, p, q):
    u, v = _sub(p, apex), _sub(q, apex)
    return math.atan2(math.sqrt(_dot(*[_cross(u, v)] * 2)), _dot(u, v))


def _agree(n1, n2, cos_min=0.2):
    """Whether two (unnormalised) normals make an angle below ``acos(cos_min)``."""
    d = _dot(n1, n2)
    return d > 0 and d * d > cos_min * cos_min * _dot(n1, n1) * _dot(n2, n2)


def _quality(p, q, r):
    """Twice the area over the summed squared edge lengths; 0.29 for equilateral."""
    n = _normal(p, q, r)
    e = _dot(_sub(q, p), _sub(q, p)) + _dot(_sub(r, q), _sub(r, q)) + _dot(_sub(p, r), _sub(p, r))
    return math.sqrt(_dot(n, n)) / e if e > 0 else 0.0


# new faces may not be thinner than this unless they replace thinner ones;
# _agree alone is scale-free and accepts rounding-level normals of collinear corners
_MIN_QUALITY = 1e-3


def _key(a, oa, b, ob):
    s = _sub(ob, oa)
    if a < b or (a == b and s > _ZERO):
        return (a, b, s)
    return (b, a, (-s[0], -s[1], -s[2]))


class _Work:
    """Mutable face soup with edge and vertex incidence."""

    def __init__(self, mesh: PeriodicMesh):
        self.B = np.array(mesh.lattice.basis, dtype=float).tolist()
        self.P = [list(map(float, p)) for p in mesh.points]
        self.alive_v = [True] * mesh.n_vertices
        self.F = []
        self.O = []
        self.emap = {}
        self.vf = [set() for _ in range(mesh.n_vertices)]
        fs = mesh.face_shifts.tolist()
        for f, s in zip(mesh.faces.tolist(), fs):
            o1 = tuple(s[0])
            o2 = _add(o1, tuple(s[1]))
            self.add_face(list(f), [_ZERO, o1, o2])

    # -- incidence ----------------------------------------------------------
    def add_face(self, verts, offs, slot=None):
        if slot is None:
            slot = len(self.F)
            self.F.append(verts)
            self.O.append(offs)
        else:
            self.F[slot] = verts
            self.O[slot] = offs
        for k in range(3):
            k1 = (k + 1) % 3
            self.emap.setdefault(_key(verts[k], offs[k], verts[k1], offs[k1]), []).append((slot, k))
            self.vf[verts[k]].add(slot)
        return slot

    def remove_face(self, f):
        verts, offs = self.F[f], self.O[f]
        for k in range(3):
            k1 = (k + 1) % 3
            key = _key(verts[k], offs[k], verts[k1], offs[k1])
            lst = self.emap[key]
            lst.remove((f, k))
            if not lst:
                del self.emap[key]
            self.vf[verts[k]].discard(f)
        self.F[f] = None
        self.O[f] = None

    def pos(self, v, o):
        p = self.P[v]
        if o == _ZERO:
            return (p[0], p[1], p[2])
        b0, b1, b2 = self.B
        return (
            p[0] + b0[0] * o[0] + b0[1] * o[1] + b0[2] * o[2],
            p[1] + b1[0] * o[0] + b1[1] * o[1] + b1[2] * o[2],
            p[2] + b2[0] * o[0] + b2[1] * o[1] + b2[2] * o[2],
        )

    def valence(self, v):
        return len(self.vf[v])

    def quad(self, key):
        """Corners ``a, b, c, d`` of the two faces on ``key`` in the first face's frame."""
        inc = self.emap.get(key)
        if inc is None or len(inc) != 2:
            return None
        (f, k), (g, l) = inc
        vf, of = self.F[f], self.O[f]
        vg, og = self.G(g)
        a, b, c = vf[k], vf[(k + 1) % 3], vf[(k + 2) % 3]
        oa, ob, oc = of[k], of[(k + 1) % 3], of[(k + 2) % 3]
        if vg[l] != b or vg[(l + 1) % 3] != a:
            return None
        t = _sub(oa, og[(l + 1) % 3])
        if _add(og[l], t) != ob:
            return None
        d, od = vg[(l + 2) % 3], _add(og[(l + 2) % 3], t)
        return f, g, (a, oa), (b, ob), (c, oc), (d, od)

    def G(self, g):
        return self.F[g], self.O[g]

    def neighbors(self, v):
        """``{(w, offset of w relative to v)}`` over the one-ring."""
        out = set()
        for f in self.vf[v]:
            verts, offs = self.F[f], self.O[f]
            k = verts.index(v)
            for j in (1, 2):
                w = verts[(k + j) % 3]
                out.add((w, _sub(offs[(k + j) % 3], offs[k])))
        return out

    def length(self, key):
        a, b, s = key
        p = self.pos(b, s)
        q = self.P[a]
        return math.dist(p, q)

    # -- operations ---------------------------------------------------------
    def split(self, key):
        q = self.quad(key)
        if q is None:
            return False
        f, g, (a, oa), (b, ob), (c, oc), (d, od) = q
        pa, pb = self.pos(a, oa), self.pos(b, ob)
        m = len(self.P)
        self.P.append([(x + y) * 0.5 for x, y in zip(pa, pb)])
        self.alive_v.append(True)
        self.vf.append(set())
        self.remove_face(f)
        self.remove_face(g)
        self.add_face([a, m, c], [oa, _ZERO, oc], f)
        self.add_face([m, b, c], [_ZERO, ob, oc])
        self.add_face([b, m, d], [ob, _ZERO, od], g)
        self.add_face([m, a, d], [_ZERO, oa, od])
        return True

    def flip(self, key):
        q = self.quad(key)
        if q is None:
            return False
        f, g, (a, oa), (b, ob), (c, oc), (d, od) = q
        if _key(c, oc, d, od) in self.emap or (c == d and oc == od):
            return False
        if self.valence(a) <= 3 or self.valence(b) <= 3:
            return False
        pa, pb, pc, pd = (self.pos(*x) for x in ((a, oa), (b, ob), (c, oc), (d, od)))
        n_old = _add(_normal(pa, pb, pc), _normal(pb, pa, pd))
        if not (_agree(_normal(pc, pa, pd), n_old) and _agree(_normal(pc, pd, pb), n_old)):
            return False
        floor = min(_MIN_QUALITY, _quality(pa, pb, pc), _quality(pb, pa, pd))
        if min(_quality(pc, pa, pd), _quality(pc, pd, pb)) < floor:
            return False
        self.remove_face(f)
        self.remove_face(g)
        self.add_face([c, a, d], [oc, oa, od], f)
        self.add_face([c, d, b], [oc, od, ob], g)
        return True

    def delaunay_violation(self, key):
        """``alpha + beta - pi`` for the two angles opposite ``key`` (positive: flip)."""
        q = self.quad(key)
        if q is None:
            return -1.0
        _, _, (a, oa), (b, ob), (c, oc), (d, od) = q
        pa, pb, pc, pd = (self.pos(*x) for x in ((a, oa), (b, ob), (c, oc), (d, od)))
        return _angle(pc, pa, pb) + _angle(pd, pa, pb) - math.pi

    def collapse(self, key, max_len):
        """Merge the second endpoint of ``key`` into the first at the midpoint."""
        q = self.quad(key)
        if q is None:
            return False
        f, g, (a, oa), (b, ob), (c, oc), (d, od) = q
        if a == b:
            return False
        if self.valence(c) <= 3 or self.valence(d) <= 3:
            return False
        delta = _sub(oa, ob)  # offset that maps b's frame onto a's
        na = self.neighbors(a)
        nb = {(w, _add(o, _sub(ob, oa))) for w, o in self.neighbors(b)}
        common = na & nb
        if common != {(c, _sub(oc, oa)), (d, _sub(od, oa))}:
            return False
        # a second connection between a and b would become a loop
        if any(w == a and o != _ZERO for w, o in nb):
            return False
        pa, pb = self.pos(a, oa), self.pos(b, ob)
        mid = [(x + y) * 0.5 for x, y in zip(pa, pb)]
        # new position of a in its own stored frame (offset oa in face f)
        shift = self.pos(a, oa)
        pnew = [m - (s - p) for m, s, p in zip(mid, shift, self.P[a])]
        # geometric checks on the faces that survive
        touched = (self.vf[a] | self.vf[b]) - {f, g}
        new_faces = []
        for h in touched:
            verts, offs = list(self.F[h]), list(self.O[h])
            if b in verts:
                k = verts.index(b)
                verts[k] = a
                offs[k] = _add(offs[k], delta)
            new_faces.append((h, verts, offs))
        old_p = self.P[a]
        for h, verts, offs in new_faces:
            x_old = [self.pos(v, o) for v, o in zip(self.F[h], self.O[h])]
            self.P[a] = pnew
            x_new = [self.pos(v, o) for v, o in zip(verts, offs)]
            self.P[a] = old_p
            if not _agree(_normal(*x_new), _normal(*x_old)):
                return False
            if _quality(*x_new) < min(_MIN_QUALITY, _quality(*x_old)):
                return False
            k = verts.index(a)
            for j in (1, 2):
                if math.dist(x_new[k], x_new[(k + j) % 3]) > max_len:
                    return False
        for h in touched:
            self.remove_face(h)
        self.remove_face(f)
        self.remove_face(g)
        self.P[a] = pnew
        self.alive_v[b] = False
        for h, verts, offs in new_faces:
            self.add_face(verts, offs, h)
        return True

    # -- export -------------------------------------------------------------
    def to_mesh(self, lattice) -> PeriodicMesh:
        alive = [i for i, ok in enumerate(self.alive_v) if ok and self.vf[i]]
        remap = np.full(len(self.P), -1, dtype=np.int64)
        remap[alive] = np.arange(len(alive))
        pts = np.array([self.P[i] for i in alive])
        faces, shifts = [], []
        for verts, offs in zip(self.F, self.O):
            if verts is None:
                continue
            faces.append([remap[v] for v in verts])
            shifts.append([_sub(offs[(k + 1) % 3], offs[k]) for k in range(3)])
        return PeriodicMesh(pts, np.array(faces), np.array(shifts), lattice)


def target_edge_length(mesh: PeriodicMesh, faces: int) -> float:
    """Edge length of equilateral triangles covering ``mesh`` with ``faces`` faces."""
    return math.sqrt(4.0 * mesh.area() / (math.sqrt(3.0) * faces))


def _smooth(mesh: PeriodicMesh, weight, project):
    """One pass of area-weighted centroidal smoothing restricted to tangent planes."""
    from .geometry import vertex_normals

    fc = mesh.face_coords()
    cen = fc.mean(axis=1)
    area = mesh.face_areas()
    if not np.all(area > 1e-14 * area.mean()):
        raise InvalidMesh("remeshing produced a zero-area face")
    V = mesh.n_vertices
    acc = np.zeros((V, 3))
    wsum = np.zeros(V)
    for k in range(3):
        # barycentre expressed relative to corner k, then attached to that vertex
        rel = cen - fc[:, k]
        np.add.at(acc, mesh.faces[:, k], area[:, None] * rel)
        np.add.at(wsum, mesh.faces[:, k], area)
    move = acc / wsum[:, None]
    N = vertex_normals(mesh, check=False)
    move -= np.einsum("vd,vd->v", move, N)[:, None] * N
    X = mesh.points + weight * move
    if project is not None:
        X = project(X)
    return mesh.with_points(X)


def isotropic_remesh(mesh: PeriodicMesh, length: float, iterations: int = 8, *, project=None,
                     smooth_steps: int = 3, check: bool = True) -> PeriodicMesh:
    """Remesh towards edges of length ``length``.

    Each iteration first flips edges that violate the intrinsic Delaunay
    condition (this removes the slivers of marching cubes), then splits
    edges longer than ``4/3 length``, collapses edges
    shorter than ``4/5 length``, flips edges that bring vertex valences
    closer to six and applies ``smooth_steps`` tangential smoothing passes.
    ``project`` maps an ``(V, 3)`` array of points back onto the target
    surface after each smoothing pass.

    Raises
    ------
    InvalidMesh
        If the result fails :func:`validate_mesh` (``check=True``).
    """
    hi, lo = 4.0 / 3.0 * length, 4.0 / 5.0 * length
    lattice = mesh.lattice
    for it in range(iterations):
        w = _Work(mesh)
        n_del = 0
        for _ in range(3):
            flipped = 0
            for key in list(w.emap):
                if key in w.emap and w.delaunay_violation(key) > 1e-9:
                    flipped += w.flip(key)
            n_del += flipped
            if not flipped:
                break
        n_split = 0
        for key in sorted(w.emap, key=w.length, reverse=True):
            if key in w.emap and w.length(key) > hi:
                n_split += w.split(key)
        n_col = 0
        for key in sorted(w.emap, key=w.length):
            if key in w.emap and w.alive_v[key[0]] and w.alive_v[key[1]] and w.length(key) < lo:
                n_col += w.collapse(key, hi)
        n_flip = 0
        for key in list(w.emap):
            if key not in w.emap:
                continue
            q = w.quad(key)
            if q is None:
                continue
            _, _, (a, _), (b, _), (c, _), (d, _) = q
            va, vb, vc, vd = (w.valence(x) for x in (a, b, c, d))
            before = (va - 6) ** 2 + (vb - 6) ** 2 + (vc - 6) ** 2 + (vd - 6) ** 2
            after = (va - 7) ** 2 + (vb - 7) ** 2 + (vc - 5) ** 2 + (vd - 5) ** 2
            if after < before:
                n_flip += w.flip(key)
        mesh = w.to_mesh(lattice)
        for _ in range(smooth_steps):
            mesh = _smooth(mesh, 0.5, project)
        logger.debug("remesh pass %d: %d Delaunay flips, %d splits, %d collapses, %d valence flips",
                     it, n_del, n_split, n_col, n_flip)
    if check:
        diag = validate_mesh(mesh)
        if not diag.ok:
            raise InvalidMesh("remeshing produced an invalid mesh: " + "; ".join(diag.failures))
    return mesh

"""Periodic meshes of flat tori and of nodal triply periodic surfaces."""
from __future__ import annotations

import numpy as np
from skimage import measure

from .errors import ExtractionFailed, InvalidMesh, TooCoarse
from .torus import Lattice, PeriodicMesh, make_lattice, validate_mesh

__all__ = [
    "FAMILIES",
    "flat_torus_mesh",
    "tpms_lattice",
    "tpms_nodal_mesh",
    "nodal_function",
    "nodal_gradient",
    "project_to_nodal",
    "subdivide",
]

FAMILIES = ("P", "D", "G")

_PI = np.pi


def flat_torus_mesh(lat: Lattice, normal_axis: int = 2, resolution: int = 8) -> PeriodicMesh:
    """Regular ``m x m`` triangulation of the 2-torus spanned by two basis columns.

    The two lattice vectors other than ``normal_axis`` (taken in cyclic
    order) span the plane; with a cubic lattice the face normals are
    ``+e_axis``.  Axes are 0-based.
    """
    m = int(resolution)
    if m < 3:
        raise TooCoarse(f"resolution {m} < 3")
    d = lat.dimension
    if d != 3:
        raise ValueError("flat_torus_mesh builds surfaces in 3-tori")
    a1, a2 = (normal_axis + 1) % 3, (normal_axis + 2) % 3
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    u = np.zeros((m * m, 3))
    u[:, a1] = i.reshape(-1) / m
    u[:, a2] = j.reshape(-1) / m
    pts = lat.to_cartesian(u)

    def vid(a, b):
        return (a % m) * m + (b % m)

    def wrap_shift(a, b):
        s = np.zeros(a.shape + (3,), dtype=np.int64)
        s[..., a1] = a // m
        s[..., a2] = b // m
        return s

    i0, j0 = i.reshape(-1), j.reshape(-1)
    corners = [((0, 0), (1, 0), (1, 1)), ((0, 0), (1, 1), (0, 1))]
    faces, shifts = [], []
    for tri in corners:
        ia = [i0 + di for di, _ in tri]
        ja = [j0 + dj for _, dj in tri]
        faces.append(np.stack([vid(ia[k], ja[k]) for k in range(3)], axis=1))
        off = [wrap_shift(ia[k], ja[k]) for k in range(3)]
        shifts.append(np.stack([off[(k + 1) % 3] - off[k] for k in range(3)], axis=1))
    return PeriodicMesh(pts, np.concatenate(faces), np.concatenate(shifts), lat)


def tpms_lattice(family: str) -> Lattice:
    """Smallest lattice on which the nodal surface is a two-sided genus-3 quotient.

    P uses the cube of side 2 pi; D is invariant under the face-centred
    translations ``(pi, pi, 0)`` and G under the body-centred ``(pi, pi, pi)``,
    so their primitive cells are the corresponding fcc and bcc cells.
    """
    if family == "P":
        return make_lattice(2 * _PI * np.eye(3))
    if family == "D":
        return make_lattice(_PI * np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=float))
    if family == "G":
        return make_lattice(_PI * np.array([[-1, 1, 1], [1, -1, 1], [1, 1, -1]], dtype=float))
    raise ValueError(f"unknown surface family {family!r}")


def nodal_function(family: str, x):
    """Trigonometric level-set approximant evaluated at points ``(..., 3)``."""
    x = np.asarray(x, dtype=float)
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    if family == "P":
        return np.cos(X) + np.cos(Y) + np.cos(Z)
    if family == "D":
        sx, sy, sz = np.sin(X), np.sin(Y), np.sin(Z)
        cx, cy, cz = np.cos(X), np.cos(Y), np.cos(Z)
        return sx * sy * sz + sx * cy * cz + cx * sy * cz + cx * cy * sz
    if family == "G":
        return np.sin(X) * np.cos(Y) + np.sin(Y) * np.cos(Z) + np.sin(Z) * np.cos(X)
    raise ValueError(f"unknown surface family {family!r}")


def nodal_gradient(family: str, x):
    """Gradient of :func:`nodal_function`, shape ``(..., 3)``."""
    x = np.asarray(x, dtype=float)
    s, c = np.sin(x), np.cos(x)
    sx, sy, sz = s[..., 0], s[..., 1], s[..., 2]
    cx, cy, cz = c[..., 0], c[..., 1], c[..., 2]
    if family == "P":
        g = [-sx, -sy, -sz]
    elif family == "D":
        g = [
            cx * sy * sz + cx * cy * cz - sx * sy * cz - sx * cy * sz,
            sx * cy * sz - sx * sy * cz + cx * cy * cz - cx * sy * sz,
            sx * sy * cz - sx * cy * sz - cx * sy * sz + cx * cy * cz,
        ]
    elif family == "G":
        g = [cx * cy - sz * sx, -sx * sy + cy * cz, -sy * sz + cz * cx]
    else:
        raise ValueError(f"unknown surface family {family!r}")
    return np.stack(g, axis=-1)


def project_to_nodal(family: str, x, steps: int = 3):
    """Newton projection of points onto the zero set of the nodal function."""
    x = np.array(x, dtype=float)
    for _ in range(steps):
        f = nodal_function(family, x)
        g = nodal_gradient(family, x)
        x -= (f / np.einsum("...d,...d->...", g, g))[..., None] * g
    return x


# generic sampling offset (lattice-grid units) keeps grid nodes off the level set
_GRID_OFFSET = np.array([0.1234567, 0.2718281, 0.3141592])


def tpms_nodal_mesh(family: str, resolution: int = 64, lattice: Lattice | None = None, *,
                    remesh_iterations: int = 5) -> PeriodicMesh:
    """Mesh of the nodal surface of ``family`` in its torus.

    The nodal function is sampled on a periodic ``resolution^3`` grid in
    lattice coordinates, extracted with marching cubes on a wrap-padded copy
    of the grid and welded across the cell faces.  Faces are oriented with
    normals pointing into the region where the nodal function is positive.

    Unless ``remesh_iterations`` is 0, the raw extraction is then remeshed
    isotropically with the same number of faces, every smoothing pass
    projecting vertices back onto the level set.  Marching cubes alone
    produces slivers whose irregularity dominates every pointwise
    curvature quantity downstream.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown surface family {family!r}")
    n = int(resolution)
    if n < 16:
        raise TooCoarse(f"resolution {n} < 16")
    lat = tpms_lattice(family) if lattice is None else lattice
    g = (np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), axis=-1) + _GRID_OFFSET) / n
    vol = nodal_function(family, lat.to_cartesian(g))
    vol = np.pad(vol, ((0, 1), (0, 1), (0, 1)), mode="wrap")
    verts, faces, _, _ = measure.marching_cubes(vol, level=0.0, allow_degenerate=False)

    copy = np.floor(verts / n + 1e-12).astype(np.int64)
    wrapped = verts - n * copy
    key = np.round(wrapped * 2**20).astype(np.int64)
    uniq, ids = np.unique(key, axis=0, return_inverse=True)
    ids = ids.reshape(-1)
    base = np.zeros((len(uniq), 3))
    base[ids] = wrapped
    f = ids[faces]
    c = copy[faces]
    shifts = np.stack([c[:, (k + 1) % 3] - c[:, k] for k in range(3)], axis=1)
    pts = lat.to_cartesian((base + _GRID_OFFSET) / n)
    mesh = PeriodicMesh(pts, f, shifts, lat)
    mesh = _orient_towards_positive(mesh, family)
    diag = validate_mesh(mesh)
    if not diag.ok:
        raise ExtractionFailed(
            f"{family} at resolution {n}: {'; '.join(diag.failures)}; try a higher resolution"
        )
    if remesh_iterations > 0:
        from .remesh import isotropic_remesh, target_edge_length

        length = target_edge_length(mesh, mesh.n_faces)
        try:
            mesh = isotropic_remesh(mesh, length, remesh_iterations,
                                    project=lambda x: project_to_nodal(family, x))
        except InvalidMesh as exc:
            raise ExtractionFailed(f"{family} at resolution {n}: {exc}") from exc
    return mesh


def _orient_towards_positive(mesh, family):
    from .geometry import face_normals

    fn = face_normals(mesh)
    x = mesh.face_coords().mean(axis=1)
    eps = 1e-3 * mesh.mean_edge_length()
    probe = nodal_function(family, x + eps * fn) - nodal_function(family, x - eps * fn)
    if np.sum(probe) < 0:
        return mesh.with_faces_reversed()
    return mesh


def subdivide(mesh: PeriodicMesh) -> PeriodicMesh:
    """Split every triangle into four at its edge midpoints."""
    V = mesh.n_vertices
    p = mesh.points
    mids = p[mesh.edges[:, 0]] + 0.5 * mesh.edge_vectors()
    pts = np.concatenate([p, mids])

    fs = mesh.face_shifts
    # offsets of the three corners relative to corner 0 of each face
    off = np.stack([np.zeros_like(fs[:, 0]), fs[:, 0], fs[:, 0] + fs[:, 1]], axis=1)
    sign = mesh.face_edge_signs
    # a midpoint is stored relative to its canonical tail
    moff = np.stack(
        [np.where(sign[:, k, None] > 0, off[:, k], off[:, (k + 1) % 3]) for k in range(3)], axis=1
    )
    a, b, c = mesh.faces.T
    mab, mbc, mca = (V + mesh.face_edges[:, k] for k in range(3))
    oa, ob, oc = off[:, 0], off[:, 1], off[:, 2]
    pab, pbc, pca = moff[:, 0], moff[:, 1], moff[:, 2]
    tris = [
        ((a, oa), (mab, pab), (mca, pca)),
        ((mab, pab), (b, ob), (mbc, pbc)),
        ((mca, pca), (mbc, pbc), (c, oc)),
        ((mab, pab), (mbc, pbc), (mca, pca)),
    ]
    faces, shifts = [], []
    for tri in tris:
        faces.append(np.stack([t[0] for t in tri], axis=1))
        shifts.append(np.stack([tri[(k + 1) % 3][1] - tri[k][1] for k in range(3)], axis=1))
    return PeriodicMesh(pts, np.concatenate(faces), np.concatenate(shifts), mesh.lattice)

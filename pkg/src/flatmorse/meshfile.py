"""Reading and writing periodic meshes and per-vertex fields.

The native format is JSON::

    {"format": "flatmorse-mesh", "version": 1,
     "basis": [[...], ...],          # row-major; lattice vectors are columns
     "vertices": [[u, v, w], ...],   # lattice coordinates in [0, 1)
     "faces": [[a, b, c], ...],
     "edge_shifts": {"a,b": [i, j, k], ...}}

Each undirected edge appears once, keyed ``"tail,head"``; the reverse
direction carries the negated shift.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import InvalidMesh
from .torus import PeriodicMesh, make_lattice

__all__ = ["mesh_to_dict", "mesh_from_dict", "save_mesh", "load_mesh", "export_obj", "write_vertex_csv",
           "atomic_write", "atomic_target"]

FORMAT = "flatmorse-mesh"


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def atomic_target(path):
    """Yield a temporary path that replaces ``path`` if the block succeeds."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def mesh_to_dict(mesh: PeriodicMesh) -> dict:
    pairs = [tuple(e) for e in mesh.edges.tolist()]
    if len(set(pairs)) != len(pairs):
        raise InvalidMesh("two edges join the same vertex pair; the edge-shift map cannot represent the mesh")
    return {
        "format": FORMAT,
        "version": 1,
        "basis": np.asarray(mesh.lattice.basis).tolist(),
        "vertices": mesh.lattice.to_lattice(mesh.points).tolist(),
        "faces": mesh.faces.tolist(),
        "edge_shifts": {f"{a},{b}": s for (a, b), s in zip(pairs, mesh.edge_shifts.tolist())},
    }


def mesh_from_dict(doc: dict) -> PeriodicMesh:
    try:
        lat = make_lattice(np.array(doc["basis"], dtype=float))
        uv = np.array(doc["vertices"], dtype=float)
        faces = np.array(doc["faces"], dtype=np.int64)
        shifts = doc["edge_shifts"]
    except KeyError as exc:
        raise InvalidMesh(f"mesh document lacks field {exc}") from exc
    table = {}
    for k, s in shifts.items():
        a, b = (int(x) for x in k.split(","))
        table[(a, b)] = np.array(s, dtype=np.int64)
    d = lat.dimension
    fs = np.zeros((len(faces), 3, d), dtype=np.int64)
    for f, tri in enumerate(faces.tolist()):
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            if (a, b) in table:
                fs[f, k] = table[(a, b)]
            elif (b, a) in table:
                fs[f, k] = -table[(b, a)]
            else:
                raise InvalidMesh(f"no shift recorded for edge {a},{b}")
    return PeriodicMesh(lat.to_cartesian(uv), faces, fs, lat)


def save_mesh(mesh: PeriodicMesh, path):
    atomic_write(path, json.dumps(mesh_to_dict(mesh)))


def load_mesh(path) -> PeriodicMesh:
    with open(path) as fh:
        return mesh_from_dict(json.load(fh))


def export_obj(mesh: PeriodicMesh, path):
    """Wavefront OBJ of the unwrapped faces.

    Each face is placed next to its first corner; corners that land in a
    neighbouring cell become separate vertices, so seams show as cuts.
    """
    # key each corner by (vertex, lattice offset of its copy)
    off = np.zeros((mesh.n_faces, 3, mesh.dimension), dtype=np.int64)
    off[:, 1] = mesh.face_shifts[:, 0]
    off[:, 2] = mesh.face_shifts[:, 0] + mesh.face_shifts[:, 1]
    keys = np.concatenate([mesh.faces.reshape(-1, 1), off.reshape(-1, mesh.dimension)], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    pos = mesh.points[uniq[:, 0]] + mesh.lattice.translate(uniq[:, 1:])
    lines = [f"# {mesh.n_vertices} vertices, {len(uniq) - mesh.n_vertices} seam copies"]
    lines += [f"v {x:.12g} {y:.12g} {z:.12g}" for x, y, z in pos[:, :3]]
    lines += ["f {} {} {}".format(*(i + 1 for i in tri)) for tri in inv.reshape(-1, 3).tolist()]
    atomic_write(path, "\n".join(lines) + "\n")


def write_vertex_csv(path, fields: dict):
    """CSV with a ``vertex`` column followed by one column per field."""
    names = list(fields)
    cols = [np.asarray(fields[n]) for n in names]
    V = len(cols[0]) if cols else 0
    if any(len(c) != V for c in cols):
        raise ValueError("fields differ in length")
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["vertex", *names])
    for i in range(V):
        w.writerow([i, *(f"{c[i]:.17g}" for c in cols)])
    atomic_write(path, buf.getvalue())

"""Area-decreasing relaxation of periodic meshes toward discrete minimality."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import InvalidMesh, NotConverged
from .geometry import _area_gradient, assemble_laplace, vertex_normals
from .torus import PeriodicMesh, validate_mesh

__all__ = ["FlowParams", "FlowTrace", "minimize_area", "flow_metric"]

logger = logging.getLogger(__name__)


@dataclass
class FlowParams:
    """Settings for :func:`minimize_area`.

    ``target`` is dimensionless: the flow stops once
    ``max|H| * mean_edge_length <= target``.
    """

    step: float = 0.5
    backtracking: bool = True
    max_iters: int = 2000
    target: float = 1e-3
    tangential_weight: float = 0.1
    preserve_volume: bool = True
    min_step: float = 1e-10

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step size must be positive")
        if not self.target >= 0:
            raise ValueError("target residual must be non-negative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.tangential_weight < 0:
            raise ValueError("tangential_weight must be non-negative")


@dataclass
class FlowTrace:
    area: list = field(default_factory=list)
    max_h: list = field(default_factory=list)
    l2_h: list = field(default_factory=list)
    step: list = field(default_factory=list)

    def append(self, area, max_h, l2_h, step):
        self.area.append(float(area))
        self.max_h.append(float(max_h))
        self.l2_h.append(float(l2_h))
        self.step.append(float(step))

    def __len__(self):
        return len(self.area)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "area", "maxH", "l2H"])
            for i, row in enumerate(zip(self.area, self.max_h, self.l2_h)):
                w.writerow([i, *(f"{x:.17g}" for x in row)])


def _state(mesh, X):
    ops = assemble_laplace(mesh, X, check=False)
    N = vertex_normals(mesh, X, check=False)
    g = _area_gradient(mesh, points=X)
    m = ops.mass_diagonal
    H = -np.einsum("vd,vd->v", g, N) / m
    return ops, N, g, H


def flow_metric(mesh: PeriodicMesh) -> float:
    """``max|H| * mean edge length`` of ``mesh``."""
    _, _, _, H = _state(mesh, mesh.points)
    return float(np.abs(H).max() * mesh.mean_edge_length())


def _umbrella(mesh, X):
    ev = mesh.edge_vectors(X)
    E = mesh.edges
    V = mesh.n_vertices
    acc = np.zeros_like(X)
    np.add.at(acc, E[:, 0], ev)
    np.add.at(acc, E[:, 1], -ev)
    deg = np.bincount(E.reshape(-1), minlength=V)
    return acc / deg[:, None]


def minimize_area(mesh: PeriodicMesh, params: FlowParams | None = None, *, check=True):
    """Relax ``mesh`` along the discrete mean-curvature direction.

    Each iteration takes a linearly implicit step ``(M + tau S) D = -tau grad``
    of the cotangent area gradient, keeps its normal component (minus its
    area-weighted mean when ``preserve_volume`` is set, which removes the
    unstable enclosed-volume mode of saddle-type surfaces) and adds a small
    tangential umbrella smoothing term for triangle quality.  Steps that
    would increase the area are retried without the tangential term and
    then with a halved ``tau``.

    Returns
    -------
    (PeriodicMesh, FlowTrace)
        The relaxed mesh (same connectivity, vertices re-wrapped) and the
        per-iteration area and curvature history.

    Raises
    ------
    NotConverged
        When ``max_iters`` is reached or the step collapses before the
        target; ``.mesh`` and ``.trace`` hold the best iterate.
    """
    params = params or FlowParams()
    if check:
        diag = validate_mesh(mesh)
        if not diag.ok:
            raise InvalidMesh("; ".join(diag.failures))
    X = np.array(mesh.points, dtype=float)
    h = mesh.mean_edge_length()
    tau = params.step * h
    tau_max = 50.0 * params.step * h
    trace = FlowTrace()
    ops, N, g, H = _state(mesh, X)
    area = ops.total_area
    converged = False
    it = 0
    while True:
        m = ops.mass_diagonal
        trace.append(area, np.abs(H).max(), np.sqrt(np.sum(m * H * H)), tau if it else 0.0)
        if np.abs(H).max() * h <= params.target:
            converged = True
            break
        if it >= params.max_iters:
            break
        it += 1
        accepted = False
        while tau >= params.min_step * h:
            A = (ops.mass + tau * ops.stiffness).tocsc()
            D = -tau * splu(A).solve(g)
            sigma = np.einsum("vd,vd->v", D, N)
            if params.preserve_volume:
                sigma -= np.sum(m * sigma) / np.sum(m)
            normal_step = sigma[:, None] * N
            cands = [normal_step]
            if params.tangential_weight > 0:
                U = _umbrella(mesh, X)
                U -= np.einsum("vd,vd->v", U, N)[:, None] * N
                cands.insert(0, normal_step + params.tangential_weight * U)
            for step in cands:
                Xn = X + step
                new_area = mesh.area(Xn)
                if new_area <= area:
                    accepted = True
                    break
            if accepted:
                break
            if not params.backtracking:
                break
            tau *= 0.5
        if not accepted:
            logger.info("flow step collapsed at iteration %d", it)
            break
        X = Xn
        ops, N, g, H = _state(mesh, X)
        area = ops.total_area
        if params.backtracking:
            tau = min(tau * 1.5, tau_max)
    out = mesh.with_points(X)
    if not converged:
        raise NotConverged(
            f"max|H|*h = {trace.max_h[-1] * h:.3g} > target {params.target:.3g} after {it} iterations",
            mesh=out,
            trace=trace,
        )
    return out, trace

"""End-to-end verification run: mesh, relax, analyse, verify, report."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import FlatMorseError, NotConverged, StageError, UsageError
from .flow import FlowParams, FlowTrace, flow_metric, minimize_area
from .geometry import (
    assemble_laplace,
    curvature_separation_threshold,
    gauss_defect,
    shape_field,
    vertex_normals,
)
from .hodge import (
    assemble_form_laplacian,
    harmonic_basis,
    harmonic_representative,
    parallel_rank_check,
    prolong_whitney,
)
from .meshfile import atomic_write, load_mesh
from .spectral import ZERO_TOL, assemble_jacobi, morse_index, translation_field_residual
from .surfaces import FAMILIES, flat_torus_mesh, subdivide, tpms_nodal_mesh
from .torus import PeriodicMesh, cubic_lattice
from .verify import (
    bound_report,
    phi_kernel,
    pointwise_identity_residual,
    wedge_identity_residual,
    wedge_identity_worst,
)

__all__ = [
    "SCHEMA_VERSION",
    "SURFACES",
    "PipelineConfig",
    "VerificationReport",
    "PipelineRun",
    "full_pipeline",
    "run_pipeline",
    "generate_mesh",
    "relax_mesh",
    "mesh_id",
    "RefinementStudy",
    "refinement_study",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SURFACES = ("flat",) + FAMILIES + ("file",)
FLAT_BRANCH = "flat totally geodesic"
CURVED_BRANCH = "b1 >= n+1"


@dataclass
class PipelineConfig:
    """Everything a run depends on; echoed into every report."""

    surface: str = "D"
    resolution: int = 64
    mesh_path: str | None = None
    flow_target: float = 1e-3
    flow_max_iters: int = 2000
    eigen_tol: float = 1e-10
    zero_tol: float = ZERO_TOL
    betti_gap: float = 100.0
    betti_tol: float = 1e-8
    identity_tol: float = 0.05
    pointwise_tol: float = 0.10
    kernel_tol: float = 1e-3
    kernel_gap: float = 10.0
    rank_tol: float = 1e-6
    flat_tol: float = 1e-10
    remesh_iterations: int = 5
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.surface not in SURFACES:
            raise UsageError(f"unknown surface family {self.surface!r}; expected one of {', '.join(SURFACES)}")
        if self.surface == "file" and not self.mesh_path:
            raise UsageError("surface 'file' needs a mesh path")
        if self.surface != "file" and self.mesh_path:
            raise UsageError("a mesh path is only accepted with surface 'file'")
        if self.resolution < 2:
            raise UsageError("resolution must be at least 2")
        for name in ("eigen_tol", "zero_tol", "betti_gap", "betti_tol", "identity_tol", "pointwise_tol",
                     "kernel_tol", "kernel_gap", "rank_tol", "flat_tol"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        if self.flow_target < 0:
            raise UsageError("flow_target must be non-negative")
        if self.flow_max_iters < 0 or self.remesh_iterations < 0:
            raise UsageError("iteration counts must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")
        if self.threads < 1:
            raise UsageError("threads must be at least 1")

    @classmethod
    def keys(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        """Build from string or typed values; unknown keys are a usage error."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in values.items():
            if k not in fields:
                raise UsageError(f"unknown configuration key {k!r}")
            kw[k] = _coerce(fields[k], k, v)
        return cls(**kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def flow_params(self) -> FlowParams:
        return FlowParams(target=self.flow_target, max_iters=self.flow_max_iters)


def _coerce(f, key, v):
    if v is None or not isinstance(v, str):
        return v
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    try:
        if kind.startswith("int"):
            return int(v)
        if kind.startswith("float"):
            return float(v)
    except ValueError as exc:
        raise UsageError(f"bad value {v!r} for {key}") from exc
    return v


def mesh_id(mesh: PeriodicMesh) -> str:
    """Short content hash of connectivity, shifts, lattice and rounded points."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.faces, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(mesh.face_shifts, dtype=np.int64).tobytes())
    h.update(np.round(np.asarray(mesh.lattice.basis, dtype=float), 12).tobytes())
    h.update(np.round(np.asarray(mesh.points, dtype=float), 9).tobytes())
    return h.hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


@dataclass
class VerificationReport:
    """Numbers and verdicts of one run.

    Verdicts are recomputed from the stored numbers by :meth:`verdicts`, so
    a report read back from JSON yields the same booleans.
    """

    mesh_id: str | None = None
    surface: str | None = None
    n: int | None = None
    chi: int | None = None
    b1: int | None = None
    b1_topological: int | None = None
    morse_index: int | None = None
    bound: str | None = None  # exact fraction
    bound_value: float | None = None
    bound_holds: bool | None = None
    sharp: bool | None = None
    identity_residuals: dict = field(default_factory=dict)
    phi_kernel_dim: int | None = None
    phi_kernel_max: int | None = None
    kernel_bound_holds: bool | None = None
    curvature_separation: bool | None = None
    betti_bound_branch: str | None = None
    betti_bound_holds: bool | None = None
    parallel_rank: int | None = None
    diagnostics: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    seed: int | None = None
    threads: int | None = None
    timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    complete: bool = False
    error: str | None = None
    schema_version: int = SCHEMA_VERSION

    def verdicts(self) -> dict:
        """Pass/fail verdicts that decide the exit status."""
        if not self.complete:
            return {}
        tol = self.tolerances
        integ = self.identity_residuals.get("integrated", [])
        return {
            "bound_holds": self.morse_index >= Fraction(self.bound),
            "kernel_bound_holds": (not self.curvature_separation) or self.phi_kernel_dim <= self.phi_kernel_max,
            "betti_bound_holds": self.betti_bound_branch == FLAT_BRANCH or self.b1 >= self.n + 1,
            "identity_holds": all(float(r) <= tol["identity"] for r in integ),
            "b1_consistent": self.b1 == self.b1_topological,
        }

    def diagnostic_verdicts(self) -> dict:
        """Convergence diagnostics; reported but not part of the exit status."""
        if not self.complete:
            return {}
        pw = self.identity_residuals.get("pointwise", [])
        return {
            "pointwise_holds": all(float(r["relative"]) <= self.tolerances["pointwise"] for r in pw),
            "frame_invariant": all(float(r["frame_deviation"]) <= 1e-10 for r in pw),
        }

    @property
    def passed(self) -> bool:
        v = self.verdicts()
        return bool(v) and all(v.values())

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["verdicts"] = self.verdicts()
        d["diagnostic_verdicts"] = self.diagnostic_verdicts()
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def write(self, path):
        atomic_write(path, self.to_json() + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def read(cls, path) -> "VerificationReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class PipelineRun:
    """A report together with the intermediate objects of the run."""

    report: VerificationReport
    mesh: PeriodicMesh | None = None
    trace: FlowTrace | None = None
    index: object = None
    basis: object = None
    shape: object = None
    extras: dict = field(default_factory=dict)


def generate_mesh(config: PipelineConfig) -> PeriodicMesh:
    """Initial mesh for the configured surface."""
    if config.surface == "flat":
        return flat_torus_mesh(cubic_lattice(), 2, config.resolution)
    if config.surface == "file":
        return load_mesh(Path(config.mesh_path))
    return tpms_nodal_mesh(config.surface, config.resolution, remesh_iterations=config.remesh_iterations)


def relax_mesh(mesh: PeriodicMesh, config: PipelineConfig):
    return minimize_area(mesh, config.flow_params)


@contextmanager
def _stage(name, report, timings):
    t0 = time.perf_counter()
    logger.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except (FlatMorseError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0


def _thread_limit(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return nullcontext()
    return threadpool_limits(limits=n)


def run_pipeline(config: PipelineConfig) -> PipelineRun:
    """Run every stage and keep the intermediate results.

    Raises
    ------
    StageError
        Labelled with the failing stage.  A flow that stops short of its
        target still carries a partial report in ``.report``.
    """
    config.validate()
    with _thread_limit(config.threads):
        return _run(config)


def _run(config):
    timings = {}
    rep = VerificationReport(
        surface=config.surface,
        seed=config.seed,
        threads=config.threads,
        config=config.to_dict(),
        timings=timings,
        tolerances={
            "flow_target": config.flow_target,
            "eigen": config.eigen_tol,
            "zero": config.zero_tol,
            "betti_gap": config.betti_gap,
            "betti": config.betti_tol,
            "identity": config.identity_tol,
            "pointwise": config.pointwise_tol,
            "kernel": config.kernel_tol,
            "kernel_gap": config.kernel_gap,
            "rank": config.rank_tol,
            "flat": config.flat_tol,
        },
    )
    run = PipelineRun(rep)
    diag = rep.diagnostics

    with _stage("generate", rep, timings):
        mesh = generate_mesh(config)
        diag["initial"] = {"vertices": mesh.n_vertices, "faces": mesh.n_faces, "area": mesh.area()}

    with _stage("minimize", rep, timings):
        try:
            mesh, trace = relax_mesh(mesh, config)
        except NotConverged as exc:
            run.mesh, run.trace = exc.mesh, exc.trace
            rep.mesh_id = mesh_id(exc.mesh)
            rep.error = str(exc)
            diag["flow"] = _flow_diag(exc.mesh, exc.trace, False)
            raise StageError("minimize", exc, report=rep) from exc
    run.mesh, run.trace = mesh, trace
    diag["flow"] = _flow_diag(mesh, trace, True)
    rep.mesh_id = mesh_id(mesh)
    d = mesh.dimension
    n = d - 1
    rep.n = n
    rep.chi = mesh.euler_characteristic
    rep.b1_topological = 2 - rep.chi

    with _stage("geometry", rep, timings):
        ops = assemble_laplace(mesh)
        normals = vertex_normals(mesh)
        shape = shape_field(mesh, normals)
        thr = curvature_separation_threshold(mesh)
        gd = gauss_defect(mesh, ops)
        h = mesh.mean_edge_length()
        rep.curvature_separation = shape.hypothesis_holds(thr)
        a2max = float(shape.a2.max())
        flat = (not rep.curvature_separation) and a2max * h * h <= config.flat_tol
        rep.betti_bound_branch = FLAT_BRANCH if flat else CURVED_BRANCH
        diag["geometry"] = {
            "vertices": mesh.n_vertices,
            "edges": mesh.n_edges,
            "faces": mesh.n_faces,
            "area": ops.total_area,
            "mean_edge_length": h,
            "a2_max": a2max,
            "separation_max": float(shape.separation.max()),
            "separation_threshold": thr,
            "gauss_bonnet_total": gd.total,
            "gauss_bonnet_expected": 2 * np.pi * rep.chi,
        }
        run.shape = shape

    with _stage("spectrum", rep, timings):
        jac = assemble_jacobi(ops, shape.a2)
        mi = morse_index(jac, config.zero_tol, tol=config.eigen_tol, seed=config.seed)
        tr = translation_field_residual(normals, jac)
        rep.morse_index = mi.index
        diag["spectrum"] = {
            "eigenvalues": mi.spectrum.eigenvalues,
            "residuals": mi.spectrum.residuals,
            "method": mi.spectrum.method,
            "zero_gap": mi.zero_gap,
            "gap_ratio": mi.gap_ratio,
            "nearest_nonnegative": mi.nearest_nonnegative,
            "translation_residuals": tr.residuals,
        }
        run.index = mi

    with _stage("hodge", rep, timings):
        basis = harmonic_basis(mesh, config.betti_tol, config.betti_gap, seed=config.seed)
        rank = parallel_rank_check(mesh, basis, config.rank_tol)
        rep.b1 = basis.b1
        rep.parallel_rank = rank.rank
        rep.betti_bound_holds = flat or rep.b1 >= n + 1
        diag["hodge"] = {
            "eigenvalues": basis.eigenvalues,
            "gap_ratio": basis.gap_ratio,
            "gram_condition": basis.gram_condition,
            "residuals": basis.residuals(),
            "parallel_singular_values": rank.singular_values,
        }
        run.basis = basis

    with _stage("verify", rep, timings):
        wedge = [wedge_identity_residual(mesh, w, jac, normals) for w in basis.cochains.T]
        pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
        pw = []
        for k, w in enumerate(basis.cochains.T):
            for p in pairs:
                r = pointwise_identity_residual(mesh, w, p, shape, jac, seed=config.seed)
                pw.append({"member": k, "pair": list(p), "relative": r.relative, "dual_relative": r.dual_relative,
                           "frame_deviation": r.frame_deviation})
        rep.identity_residuals = {
            "integrated": [x.ratio for x in wedge],
            "integrated_sum": [x.total for x in wedge],
            "integrated_normalizer": [x.normalizer for x in wedge],
            "integrated_worst": wedge_identity_worst(mesh, basis, jac, normals),
            "pointwise": pw,
        }
        ker = phi_kernel(basis, mi.spectrum, mesh, normals, mi.index, tol=config.kernel_tol, min_gap=config.kernel_gap)
        rep.phi_kernel_dim = ker.kernel_dim
        rep.phi_kernel_max = 2 * n - 1
        rep.kernel_bound_holds = (not rep.curvature_separation) or ker.kernel_dim <= 2 * n - 1
        diag["phi"] = {"shape": list(ker.matrix.shape), "singular_values": ker.singular_values,
                       "gap_ratio": ker.gap_ratio}
        br = bound_report(mi.index, basis.b1, n)
        rep.bound = str(br.bound)
        rep.bound_value = br.value
        rep.bound_holds = br.holds
        rep.sharp = br.sharp
        run.extras["normals"] = normals
        run.extras["jacobi"] = jac

    rep.complete = True
    return run


def _flow_diag(mesh, trace, converged):
    return {
        "converged": converged,
        "iterations": max(len(trace) - 1, 0),
        "metric": flow_metric(mesh),
        "area": trace.area[-1] if len(trace) else None,
    }


def full_pipeline(config: PipelineConfig) -> VerificationReport:
    """Run the full verification and return its report."""
    return run_pipeline(config).report


@dataclass
class RefinementStudy:
    coarse: dict
    fine: dict
    fine_target: float
    fine_faces: int

    def factors(self, key="integrated"):
        c, f = np.asarray(self.coarse[key]), np.asarray(self.fine[key])
        return c / f


def _residual_summary(mesh, members, shape, jac, normals, seed):
    d = mesh.dimension
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    integ, rel, dual = [], [], []
    for w in members:
        integ.append(wedge_identity_residual(mesh, w, jac, normals).ratio)
        rs = [pointwise_identity_residual(mesh, w, p, shape, jac, seed=seed) for p in pairs]
        rel.append(max(r.relative for r in rs))
        dual.append(max(r.dual_relative for r in rs))
    tr = translation_field_residual(normals, jac)
    m = jac.mass.diagonal()
    translation = float(tr.residuals.max() / (np.sum(m * jac.a2) / m.sum()))
    return {"integrated": integ, "pointwise": rel, "pointwise_dual": dual, "translation": translation}


def refinement_study(run: PipelineRun, config: PipelineConfig, *, target_scale: float = 0.25) -> RefinementStudy:
    """Identity residuals before and after one subdivision.

    The subdivided mesh is relaxed again to ``target_scale`` times the flow
    target.  The stopping rule bounds ``max|H| * h``, so an unchanged target
    would let the leftover curvature grow as ``h`` halves; a quarter keeps
    ``max|H| * h^2`` fixed.  Harmonic forms on the fine mesh are the
    harmonic representatives of the prolonged coarse basis, so members
    correspond one to one.
    """
    mesh, basis = run.mesh, run.basis
    jac, normals = run.extras["jacobi"], run.extras["normals"]
    coarse = _residual_summary(mesh, basis.cochains.T, run.shape, jac, normals, config.seed)
    tgt = config.flow_target * target_scale
    fine, _ = minimize_area(subdivide(mesh), FlowParams(target=tgt, max_iters=config.flow_max_iters))
    lap = assemble_form_laplacian(fine)
    members = [harmonic_representative(fine, prolong_whitney(mesh, fine, w), lap) for w in basis.cochains.T]
    n2 = vertex_normals(fine)
    sh2 = shape_field(fine, n2)
    jac2 = assemble_jacobi(lap.ops, sh2.a2)
    fres = _residual_summary(fine, members, sh2, jac2, n2, config.seed)
    return RefinementStudy(coarse, fres, tgt, fine.n_faces)

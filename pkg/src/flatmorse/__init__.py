"""Morse index and first Betti number of minimal surfaces in flat 3-tori.

Periodic triangle meshes, discrete minimal-surface relaxation, the Jacobi
spectrum, harmonic 1-forms and checks of the index bound
``index >= 2 / (n (n + 1)) * (b1 - (2n - 1))``.
"""
from .errors import *  # noqa: F401,F403
from .flow import FlowParams, FlowTrace, flow_metric, minimize_area
from .geometry import (
    OperatorPair,
    ShapeField,
    assemble_laplace,
    curvature_separation_threshold,
    gauss_defect,
    shape_field,
    vertex_normals,
)
from .hodge import (
    HarmonicBasis,
    assemble_form_laplacian,
    face_circulation,
    harmonic_basis,
    harmonic_projection,
    harmonic_representative,
    parallel_rank_check,
    prolong_whitney,
    restrict_parallel,
    sharp_field,
)
from .meshfile import export_obj, load_mesh, save_mesh
from .pipeline import PipelineConfig, VerificationReport, full_pipeline, refinement_study, run_pipeline
from .remesh import isotropic_remesh
from .spectral import JacobiPair, MorseIndex, assemble_jacobi, eigen_lowest, morse_index
from .surfaces import flat_torus_mesh, subdivide, tpms_lattice, tpms_nodal_mesh
from .torus import Lattice, PeriodicMesh, cubic_lattice, make_lattice, validate_mesh
from .verify import (
    bound_report,
    phi_kernel,
    pointwise_identity_residual,
    q_form,
    test_functions,
    wedge_identity_residual,
    wedge_identity_worst,
)

__version__ = "0.1.0"

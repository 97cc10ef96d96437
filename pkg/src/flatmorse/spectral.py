"""Jacobi operator, lowest eigenpairs and the Morse index."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import IndexAmbiguous, ShapeMismatch, SolverStalled
from .geometry import OperatorPair

__all__ = [
    "JacobiPair",
    "SpectrumReport",
    "MorseIndex",
    "assemble_jacobi",
    "eigen_lowest",
    "morse_index",
    "translation_field_residual",
    "DENSE_LIMIT",
    "ZERO_TOL",
]

DENSE_LIMIT = 3000
# Ambient translations are Jacobi fields, so every minimal surface in a flat
# 3-torus carries a three-fold zero eigenvalue; on meshes at desk resolution
# that cluster sits at about 1e-3 relative to the index eigenvalue, with
# either sign.  The default tolerance sits above it.
ZERO_TOL = 1e-2


@dataclass(frozen=True)
class JacobiPair:
    """Second-variation form ``A_Q = S - M diag(|A|^2)`` with its mass ``M``."""

    form: sparse.csr_matrix
    mass: sparse.dia_matrix
    stiffness: sparse.csr_matrix
    a2: np.ndarray

    @property
    def size(self) -> int:
        return self.form.shape[0]

    @property
    def potential(self):
        """``B = M diag(|A|^2)`` (diagonal)."""
        return sparse.diags(self.mass.diagonal() * self.a2)

    def q(self, u) -> float:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.size,):
            raise ShapeMismatch(f"expected a vertex field of length {self.size}, got {u.shape}")
        return float(u @ (self.form @ u))


def assemble_jacobi(ops: OperatorPair, a2) -> JacobiPair:
    a2 = np.asarray(a2, dtype=float)
    V = ops.stiffness.shape[0]
    if a2.shape != (V,):
        raise ShapeMismatch(f"|A|^2 field has shape {a2.shape}, mesh has {V} vertices")
    if np.any(a2 < 0):
        raise ValueError("|A|^2 must be non-negative")
    S = ops.stiffness.tocsr()
    form = (S - sparse.diags(ops.mass.diagonal() * a2)).tocsr()
    # exact symmetry; the cotangent assembly is symmetric by construction
    form = ((form + form.T) * 0.5).tocsr()
    return JacobiPair(form=form, mass=ops.mass, stiffness=S, a2=a2)


@dataclass
class SpectrumReport:
    requested: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    zero_tol: float
    negative_count: int
    zero_gap: float
    seed: int
    method: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "eigenvalues": [float(x) for x in self.eigenvalues],
                "negative_count": int(self.negative_count),
                "zero_gap": float(self.zero_gap),
                "residuals": [float(x) for x in self.residuals],
                "seed": int(self.seed),
            },
            indent=2,
        )


def _residuals(A, M, lam, vecs):
    m = M.diagonal()
    r = A @ vecs - (M @ vecs) * lam[None, :]
    return np.sqrt(np.sum(r * r / m[:, None], axis=0))


def _m_normalize(M, vecs):
    m = M.diagonal()
    norms = np.sqrt(np.sum(vecs * vecs * m[:, None], axis=0))
    vecs = vecs / norms
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(vecs), axis=0)
    sgn = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    return vecs * np.where(sgn == 0, 1.0, sgn)


def _counts(lam, zero_tol):
    scale = float(np.max(np.abs(lam))) if lam.size else 1.0
    thr = zero_tol * scale
    neg = int(np.sum(lam < -thr))
    above = lam[lam >= -thr]
    below = lam[lam < -thr]
    nearest_pos = float(above.min()) if above.size else np.inf
    nearest_neg = float(below.max()) if below.size else -np.inf
    return neg, nearest_neg, nearest_pos, scale


def eigen_lowest(pair: JacobiPair, count: int, tol: float = 1e-10, *, seed: int = 0,
                 zero_tol: float = ZERO_TOL, method: str = "auto") -> SpectrumReport:
    """Smallest ``count`` eigenpairs of ``A_Q x = lambda M x``.

    ``method`` is ``"dense"``, ``"shift-invert"`` or ``"auto"`` (dense when
    the mesh has at most :data:`DENSE_LIMIT` vertices).  Eigenvectors are
    M-orthonormal.
    """
    V = pair.size
    if not 1 <= count < V:
        raise ShapeMismatch(f"count must satisfy 1 <= count < V={V}, got {count}")
    A, M = pair.form, pair.mass
    if method == "auto":
        method = "dense" if V <= DENSE_LIMIT else "shift-invert"
    if method == "dense":
        lam, vecs = scipy.linalg.eigh(A.toarray(), np.diag(M.diagonal()), subset_by_index=[0, count - 1])
    elif method == "shift-invert":
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(V)
        # A_Q >= -max|A|^2 M, so this shift lies strictly below the spectrum
        sigma = -1.05 * float(pair.a2.max()) - 1e-3 * _stiffness_scale(pair)
        try:
            lam, vecs = eigsh(A.tocsc(), k=count, M=M.tocsc(), sigma=sigma, which="LM", v0=v0,
                              tol=min(tol, 1e-12) * 1e-2, maxiter=20 * V)
        except ArpackNoConvergence as exc:
            raise SolverStalled(
                f"shift-invert Lanczos did not converge ({len(exc.eigenvalues)} of {count} pairs)",
                eigenvalues=np.sort(exc.eigenvalues),
            ) from exc
        order = np.argsort(lam)
        lam, vecs = lam[order], vecs[:, order]
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    vecs = _m_normalize(M, vecs)
    res = _residuals(A, M, lam, vecs)
    bad = res > tol * np.abs(lam) + tol
    if np.any(bad):
        raise SolverStalled(
            f"{int(bad.sum())} eigenpairs exceed the residual tolerance", eigenvalues=lam, residuals=res
        )
    neg, nn, npos, _ = _counts(lam, zero_tol)
    gap = npos - nn if np.isfinite(nn) and np.isfinite(npos) else (npos if np.isfinite(npos) else np.inf)
    return SpectrumReport(
        requested=count,
        eigenvalues=lam,
        eigenvectors=vecs,
        residuals=res,
        zero_tol=zero_tol,
        negative_count=neg,
        zero_gap=float(gap),
        seed=seed,
        method=method,
    )


def _stiffness_scale(pair):
    return float(np.max(pair.stiffness.diagonal() / pair.mass.diagonal()))


@dataclass
class MorseIndex:
    index: int
    negative_eigenvalues: np.ndarray
    nearest_nonnegative: float
    zero_gap: float
    gap_ratio: float
    spectrum: SpectrumReport = field(repr=False)


def morse_index(pair: JacobiPair, zero_tol: float = ZERO_TOL, *, start: int = 8, tol: float = 1e-10,
                seed: int = 0, method: str = "auto") -> MorseIndex:
    """Number of negative eigenvalues of the second-variation form.

    The window of computed eigenvalues is doubled until it contains an
    eigenvalue that is not counted as negative.  An eigenvalue counts as
    negative when it is below ``-zero_tol * scale`` (``scale`` is the
    largest computed magnitude).  ``zero_gap`` is the distance from the
    last negative eigenvalue to the first non-negative one, and
    ``gap_ratio`` is ``|last negative| / |first non-negative|``: how far the
    counted eigenvalues stand from the (translation) zero cluster.

    Raises
    ------
    IndexAmbiguous
        If ``zero_gap < zero_tol * scale``; ``candidates`` holds the counts
        with the eigenvalue nearest the cut on either side of it.
    """
    V = pair.size
    k = min(start, V - 1)
    while True:
        spec = eigen_lowest(pair, k, tol, seed=seed, zero_tol=zero_tol, method=method)
        neg, nn, npos, scale = _counts(spec.eigenvalues, zero_tol)
        if neg < k or k >= V - 1:
            break
        k = min(2 * k, V - 1)
    lam = spec.eigenvalues
    thr = zero_tol * scale
    gap = npos - nn
    if gap < thr:
        # the eigenvalue closer to the cut could fall on the other side
        alt = neg - 1 if abs(nn + thr) < abs(npos + thr) else neg + 1
        raise IndexAmbiguous(
            f"gap {gap:.3g} around zero is below the tolerance {thr:.3g}",
            candidates=tuple(sorted((neg, alt))),
        )
    last_neg = abs(nn) if np.isfinite(nn) else np.inf
    gap_ratio = last_neg / abs(npos) if np.isfinite(last_neg) and npos != 0 else np.inf
    return MorseIndex(
        index=neg,
        negative_eigenvalues=lam[lam < -thr],
        nearest_nonnegative=npos,
        zero_gap=float(gap) if np.isfinite(nn) else float(npos),
        gap_ratio=float(gap_ratio),
        spectrum=spec,
    )


@dataclass
class TranslationResidual:
    residuals: np.ndarray
    degenerate: np.ndarray


def translation_field_residual(normals, pair: JacobiPair) -> TranslationResidual:
    """Rayleigh quotients of the normal components ``<N, e_i>``.

    Ambient translations are Jacobi fields, so the quotients vanish in the
    continuum; a component that is identically zero is flagged instead.
    """
    normals = np.asarray(normals, dtype=float)
    if normals.shape[0] != pair.size:
        raise ShapeMismatch("normals do not match the Jacobi pair")
    m = pair.mass.diagonal()
    res = np.zeros(normals.shape[1])
    deg = np.zeros(normals.shape[1], dtype=bool)
    for i in range(normals.shape[1]):
        phi = normals[:, i]
        denom = float(np.sum(m * phi * phi))
        if denom <= 1e-24 * float(m.sum()):
            deg[i] = True
            continue
        res[i] = abs(pair.q(phi)) / denom
    return TranslationResidual(res, deg)

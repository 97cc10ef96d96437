"""Figures for a verification run, drawn from report data."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .meshfile import atomic_target  # noqa: E402

__all__ = ["plot_spectrum", "plot_flow", "plot_residuals", "plot_form_spectrum", "render_all"]


def _save(fig, path):
    with atomic_target(path) as tmp:
        fig.savefig(tmp, dpi=120, bbox_inches="tight", format=Path(path).suffix.lstrip(".") or "png")
    plt.close(fig)
    return Path(path)


def _floats(xs):
    return np.array([float(x) for x in xs])


def _logy(ax, *series):
    # log scale only when there is something positive to show
    if any(np.any(np.asarray(v) > 0) for v in series):
        ax.set_yscale("log")


def plot_spectrum(report: dict, path):
    """Lowest Jacobi eigenvalues with the band treated as zero."""
    sp = report["diagnostics"]["spectrum"]
    lam = _floats(sp["eigenvalues"])
    thr = float(report["tolerances"]["zero"]) * np.abs(lam).max()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    idx = np.arange(1, lam.size + 1)
    neg = lam < -thr
    ax.axhspan(-thr, thr, color="0.9", label="zero band")
    ax.plot(idx[~neg], lam[~neg], "o", color="C0", label="non-negative")
    ax.plot(idx[neg], lam[neg], "s", color="C3", label=f"negative ({int(neg.sum())})")
    ax.axhline(0, color="0.4", lw=0.6)
    ax.set_xlabel("k")
    ax.set_ylabel(r"$\lambda_k$")
    ax.set_title(f"Jacobi spectrum, index {report['morse_index']}")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_form_spectrum(report: dict, path):
    """Lowest eigenvalues of the 1-form Laplacian on a log scale."""
    lam = np.abs(_floats(report["diagnostics"]["hodge"]["eigenvalues"]))
    lam = np.maximum(lam, np.finfo(float).tiny)
    b1 = report["b1"]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    idx = np.arange(1, lam.size + 1)
    ax.semilogy(idx[:b1], lam[:b1], "o", color="C2", label=f"harmonic ({b1})")
    ax.semilogy(idx[b1:], lam[b1:], "o", color="C0", label="positive")
    ax.set_xlabel("k")
    ax.set_ylabel(r"$|\mu_k|$")
    ax.set_title("1-form Laplacian")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_flow(trace, path, mean_edge_length: float | None = None):
    """Area and ``max|H|`` along the relaxation."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
    it = np.arange(len(trace.area))
    a1.plot(it, trace.area, "-o", ms=3)
    a1.set_xlabel("iteration")
    a1.set_ylabel("area")
    mh = np.asarray(trace.max_h)
    if mean_edge_length:
        mh = mh * mean_edge_length
        a2.set_ylabel(r"$\max|H|\,h$")
    else:
        a2.set_ylabel(r"$\max|H|$")
    a2.plot(it, mh, "-o", ms=3)
    _logy(a2, mh)
    a2.set_xlabel("iteration")
    fig.tight_layout()
    return _save(fig, path)


def plot_residuals(report: dict, path):
    """Integrated and pointwise identity residuals per harmonic form."""
    ir = report["identity_residuals"]
    integ = _floats(ir["integrated"])
    pw = ir["pointwise"]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
    a1.bar(np.arange(integ.size), integ, color="C0")
    a1.axhline(float(report["tolerances"]["identity"]), color="C3", ls="--", label="tolerance")
    _logy(a1, integ)
    a1.set_xlabel("harmonic form")
    a1.set_ylabel("integrated ratio")
    a1.legend(fontsize=8)
    if pw:
        mem = np.array([r["member"] for r in pw])
        rel = _floats([r["relative"] for r in pw])
        dual = _floats([r["dual_relative"] for r in pw])
        a2.plot(mem, rel, "o", label=r"$L^2 / H^1$")
        a2.plot(mem, dual, "^", label=r"$H^{-1} / H^1$")
        a2.axhline(float(report["tolerances"]["pointwise"]), color="C3", ls="--", label="tolerance")
        _logy(a2, rel, dual)
        a2.legend(fontsize=8)
    a2.set_xlabel("harmonic form")
    a2.set_ylabel("pointwise relative")
    fig.tight_layout()
    return _save(fig, path)


def render_all(report: dict, out_dir, trace=None) -> list:
    """Write every figure that the report supports; returns the paths."""
    out = Path(out_dir)
    paths = []
    if trace is not None and len(trace.area):
        h = report.get("diagnostics", {}).get("geometry", {}).get("mean_edge_length")
        paths.append(plot_flow(trace, out / "flow.png", h))
    if not report.get("complete"):
        return paths
    paths.append(plot_spectrum(report, out / "spectrum.png"))
    paths.append(plot_form_spectrum(report, out / "form_spectrum.png"))
    paths.append(plot_residuals(report, out / "residuals.png"))
    return paths

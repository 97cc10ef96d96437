"""Command-line entry point.

Exit status: 0 when every verdict passes, 2 when a verdict fails and 1 on
any error (including usage errors).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FlatMorseError, StageError, UsageError

logger = logging.getLogger("flatmorse")

COMMANDS = ("generate", "minimize", "analyze", "verify", "report")
EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

# flag destination -> configuration key
_FLAG_KEYS = {
    "surface": "surface",
    "res": "resolution",
    "flow_target": "flow_target",
    "flow_max_iters": "flow_max_iters",
    "eigen_tol": "eigen_tol",
    "zero_tol": "zero_tol",
    "betti_gap": "betti_gap",
    "identity_tol": "identity_tol",
    "seed": "seed",
    "threads": "threads",
    "mesh": "mesh_path",
}
# spellings accepted in config files besides the configuration keys
_FILE_ALIASES = {"res": "resolution", "mesh": "mesh_path"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flatmorse", description="Index and first Betti number of minimal surfaces in flat 3-tori.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [
        ("generate", "write the initial mesh"),
        ("minimize", "relax the mesh toward minimality"),
        ("analyze", "spectrum, harmonic forms and residual data"),
        ("verify", "full run; exit status reflects the verdicts"),
        ("report", "full run plus figures and a text summary"),
    ]:
        s = sub.add_parser(name, help=text)
        s.add_argument("--surface", help="flat, P, D, G or file")
        s.add_argument("--res", type=int, help="grid resolution (flat: cells per side)")
        s.add_argument("--flow-target", type=float, help="stop when max|H| * mean edge length is below this")
        s.add_argument("--flow-max-iters", type=int)
        s.add_argument("--eigen-tol", type=float)
        s.add_argument("--zero-tol", type=float)
        s.add_argument("--betti-gap", type=float)
        s.add_argument("--identity-tol", type=float)
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", default="flatmorse-out", help="output directory")
        s.add_argument("--mesh", help="input mesh (JSON) for --surface file")
        s.add_argument("--config", help="key=value configuration file")
    return p


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        out[_FILE_ALIASES.get(k, k)] = v
    return out


@dataclass
class RunConfig:
    command: str
    pipeline: object
    out: Path
    overrides: list = field(default_factory=list)


def parse_config(argv=None) -> RunConfig:
    """Command line plus optional config file; flags win over the file."""
    from .pipeline import PipelineConfig

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    values = read_config_file(args.config) if args.config else {}
    known = set(PipelineConfig.keys())
    for k in values:
        if k not in known:
            raise UsageError(f"unknown configuration key {k!r}")
    overrides = []
    for dest, key in _FLAG_KEYS.items():
        v = getattr(args, dest)
        if v is None:
            continue
        if key in values and str(values[key]) != str(v):
            logger.warning("flag overrides config file: %s = %s (file had %s)", key, v, values[key])
            overrides.append(key)
        values[key] = v
    if values.get("mesh_path") and "surface" not in values:
        values["surface"] = "file"
    cfg = PipelineConfig.from_mapping(values)
    if cfg.mesh_path:
        cfg.mesh_path = str(Path(cfg.mesh_path).resolve())
    return RunConfig(args.command, cfg, Path(args.out).resolve(), overrides)


def _prepare_out(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".flatmorse-write-test"
    probe.write_text("")
    probe.unlink()


def _write_trace(trace, out):
    from .meshfile import atomic_target

    if trace is not None:
        with atomic_target(out / "flow_trace.csv") as tmp:
            trace.to_csv(tmp)


def _write_mesh(mesh, out, stem="mesh"):
    from .meshfile import export_obj, save_mesh

    save_mesh(mesh, out / f"{stem}.json")
    export_obj(mesh, out / f"{stem}.obj")


def _write_analysis(run, out):
    from .meshfile import atomic_write, write_vertex_csv

    mi, sh = run.index, run.shape
    if mi is not None:
        atomic_write(out / "spectrum.json", mi.spectrum.to_json() + "\n")
        fields = {"k1": sh.k1, "k2": sh.k2, "a2": sh.a2}
        for q in range(min(mi.spectrum.eigenvectors.shape[1], 4)):
            fields[f"phi{q}"] = mi.spectrum.eigenvectors[:, q]
        write_vertex_csv(out / "vertex_fields.csv", fields)
    if run.basis is not None:
        W = run.basis.cochains
        lines = ["edge,tail,head," + ",".join(f"omega{k}" for k in range(W.shape[1]))]
        for e, (a, b) in enumerate(run.mesh.edges.tolist()):
            lines.append(f"{e},{a},{b}," + ",".join(f"{x:.17g}" for x in W[e]))
        atomic_write(out / "harmonic_forms.csv", "\n".join(lines) + "\n")


def summary_text(report) -> str:
    d = report.to_dict()
    rows = [
        ("mesh", d["mesh_id"]),
        ("surface", d["surface"]),
        ("n", d["n"]),
        ("chi", d["chi"]),
        ("b1", d["b1"]),
        ("Morse index", d["morse_index"]),
        ("bound", f"{d['bound']} (holds: {d['bound_holds']}, sharp: {d['sharp']})"),
        ("dim ker Phi", f"{d['phi_kernel_dim']} (at most {d['phi_kernel_max']}: {d['kernel_bound_holds']})"),
        ("curvature separation", d["curvature_separation"]),
        ("b1 branch", f"{d['betti_bound_branch']} ({d['betti_bound_holds']})"),
        ("parallel rank", d["parallel_rank"]),
    ]
    ir = d["identity_residuals"]
    if ir:
        rows.append(("integrated ratio max", max(float(x) for x in ir["integrated"])))
        if ir["pointwise"]:
            rows.append(("pointwise relative max", max(float(r["relative"]) for r in ir["pointwise"])))
    lines = [f"{k:>24}: {v}" for k, v in rows]
    lines.append("")
    for k, v in d["verdicts"].items():
        lines.append(f"{'PASS' if v else 'FAIL'} {k}")
    for k, v in d["diagnostic_verdicts"].items():
        lines.append(f"{'pass' if v else 'fail'} {k} (diagnostic)")
    return "\n".join(lines) + "\n"


def execute(rc: RunConfig) -> int:
    from . import pipeline as pl
    from .meshfile import atomic_write

    cfg, out = rc.pipeline, rc.out
    _prepare_out(out)
    if rc.command == "generate":
        mesh = pl.generate_mesh(cfg)
        _write_mesh(mesh, out)
        print(f"wrote {out / 'mesh.json'} ({mesh.n_vertices} vertices, {mesh.n_faces} faces)")
        return EXIT_OK
    if rc.command == "minimize":
        from .errors import NotConverged

        mesh = pl.generate_mesh(cfg)
        try:
            relaxed, trace = pl.relax_mesh(mesh, cfg)
        except NotConverged as exc:
            _write_mesh(exc.mesh, out, "mesh_partial")
            _write_trace(exc.trace, out)
            raise StageError("minimize", exc) from exc
        _write_mesh(relaxed, out)
        _write_trace(trace, out)
        print(f"relaxed in {len(trace) - 1} iterations; area {trace.area[-1]:.9g}")
        return EXIT_OK

    try:
        run = pl.run_pipeline(cfg)
    except StageError as exc:
        if exc.report is not None:
            exc.report.write(out / "report.json")
            logger.error("partial report written to %s", out / "report.json")
        raise
    rep = run.report
    _write_mesh(run.mesh, out)
    _write_trace(run.trace, out)
    rep.write(out / "report.json")
    if rc.command in ("analyze", "report"):
        _write_analysis(run, out)
    text = summary_text(rep)
    if rc.command == "report":
        from .plotting import render_all

        render_all(rep.to_dict(), out, run.trace)
        atomic_write(out / "summary.txt", text)
    print(text, end="")
    if rc.command == "analyze":
        return EXIT_OK
    return EXIT_OK if rep.passed else EXIT_FAIL


def main(argv=None) -> int:
    try:
        rc = parse_config(argv)
        return execute(rc)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (FlatMorseError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

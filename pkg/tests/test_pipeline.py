import json

import pytest

from flatmorse.errors import NotConverged, StageError, UsageError
from flatmorse.meshfile import save_mesh
from flatmorse.pipeline import (
    FLAT_BRANCH,
    PipelineConfig,
    VerificationReport,
    full_pipeline,
    generate_mesh,
    run_pipeline,
)


@pytest.fixture(scope="module")
def flat_report():
    return full_pipeline(PipelineConfig(surface="flat", resolution=32))


def test_flat_report(flat_report):
    r = flat_report
    assert r.complete and r.error is None
    assert (r.n, r.chi, r.b1, r.b1_topological, r.morse_index) == (2, 0, 2, 2, 0)
    assert r.bound == "-1/3"
    assert r.parallel_rank == 2
    assert r.betti_bound_branch == FLAT_BRANCH
    assert r.curvature_separation is False
    assert r.passed
    assert all(r.diagnostic_verdicts().values())
    assert set(r.timings) >= {"generate", "minimize", "geometry"}


def test_report_round_trip(tmp_path, flat_report):
    path = tmp_path / "report.json"
    flat_report.write(path)
    back = VerificationReport.read(path)
    assert back.verdicts() == flat_report.verdicts()
    assert back.diagnostic_verdicts() == flat_report.diagnostic_verdicts()
    doc = json.loads(path.read_text())
    assert doc["verdicts"] == flat_report.verdicts()
    assert doc["config"]["resolution"] == 32


def test_verdicts_follow_the_numbers(flat_report):
    d = flat_report.to_dict()
    d["b1"] = 3
    assert VerificationReport.from_dict(d).verdicts()["b1_consistent"] is False
    d = flat_report.to_dict()
    d["tolerances"]["identity"] = -1.0
    assert VerificationReport.from_dict(d).verdicts()["identity_holds"] is False


def test_unknown_schema(flat_report):
    d = flat_report.to_dict()
    d["schema_version"] = 99
    with pytest.raises(ValueError):
        VerificationReport.from_dict(d)


def test_runs_are_deterministic(flat_report):
    again = full_pipeline(PipelineConfig(surface="flat", resolution=32)).to_dict()
    first = flat_report.to_dict()
    for d in (first, again):
        d.pop("timings")
    assert first == again


def test_mesh_file_input(tmp_path, flat_report):
    path = tmp_path / "flat.json"
    save_mesh(generate_mesh(PipelineConfig(surface="flat", resolution=32)), path)
    r = full_pipeline(PipelineConfig(surface="file", mesh_path=str(path)))
    assert r.mesh_id == flat_report.mesh_id
    assert r.verdicts() == flat_report.verdicts()


def test_missing_mesh_file(tmp_path):
    cfg = PipelineConfig(surface="file", mesh_path=str(tmp_path / "absent.json"))
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    assert info.value.stage == "generate"
    assert info.value.report is None


def test_unconverged_flow_keeps_a_partial_report():
    cfg = PipelineConfig(surface="D", resolution=24, flow_max_iters=0)
    with pytest.raises(StageError) as info:
        run_pipeline(cfg)
    exc = info.value
    assert exc.stage == "minimize"
    assert isinstance(exc.cause, NotConverged)
    rep = exc.report
    assert rep is not None and not rep.complete
    assert rep.mesh_id is not None
    assert rep.diagnostics["flow"]["converged"] is False
    assert rep.verdicts() == {}


@pytest.mark.parametrize(
    "bad",
    [
        dict(surface="Q"),
        dict(surface="file"),
        dict(surface="D", mesh_path="x.json"),
        dict(resolution=1),
        dict(zero_tol=0),
        dict(flow_target=-1),
        dict(seed=-1),
        dict(threads=0),
    ],
)
def test_config_validation(bad):
    with pytest.raises(UsageError):
        PipelineConfig(**bad)


def test_config_from_strings():
    cfg = PipelineConfig.from_mapping({"surface": "G", "resolution": "48", "zero_tol": "0.02"})
    assert (cfg.surface, cfg.resolution, cfg.zero_tol) == ("G", 48, 0.02)
    with pytest.raises(UsageError):
        PipelineConfig.from_mapping({"colour": "red"})
    with pytest.raises(UsageError):
        PipelineConfig.from_mapping({"resolution": "many"})

import numpy as np
import pytest

from flatmorse import FlowParams, flow_metric, minimize_area, tpms_nodal_mesh, validate_mesh
from flatmorse.errors import NotConverged
from flatmorse.geometry import mean_curvature


def test_flat_torus_does_not_move(flat8):
    out, trace = minimize_area(flat8)
    np.testing.assert_array_equal(out.points, flat8.points)
    assert len(trace) == 1


@pytest.fixture(scope="module")
def nodal_p():
    return tpms_nodal_mesh("P", 24)


def test_flow_reduces_curvature_tenfold(nodal_p):
    before = np.abs(mean_curvature(nodal_p)).max()
    out, trace = minimize_area(nodal_p)
    after = np.abs(mean_curvature(out)).max()
    assert after * 10 <= before
    assert flow_metric(out) <= 1e-3
    assert validate_mesh(out).ok
    assert out.euler_characteristic == -4


def test_zero_target_never_converges(nodal_p):
    with pytest.raises(NotConverged) as info:
        minimize_area(nodal_p, FlowParams(target=0.0, max_iters=6))
    exc = info.value
    area = np.array(exc.trace.area)
    assert np.all(np.diff(area) <= 0)
    assert exc.mesh.n_vertices == nodal_p.n_vertices


def test_volume_is_preserved(nodal_p):
    out, _ = minimize_area(nodal_p)
    # the nodal D/P/G surfaces split the cell into equal halves; normal steps with zero mean keep that to first order
    area_change = abs(out.area() - nodal_p.area()) / nodal_p.area()
    assert area_change < 0.01


def test_trace_csv(tmp_path, nodal_p):
    _, trace = minimize_area(nodal_p)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "iteration,area,maxH,l2H"
    assert len(rows) == len(trace) + 1


@pytest.mark.parametrize("bad", [dict(step=0), dict(target=-1), dict(max_iters=-1), dict(tangential_weight=-0.1)])
def test_flow_params_validation(bad):
    with pytest.raises(ValueError):
        FlowParams(**bad)

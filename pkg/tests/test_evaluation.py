import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boltwatch import synth
from boltwatch.detection import AnnotationDetector
from boltwatch.errors import InvalidParameter, UndefinedMetric
from boltwatch.evaluation import (
    EdgeLabelSet, StudyGrid, accuracy, gt_from_edges, read_gt, read_study_csv, run_param_study,
    score_bolts, wrap_line_delta, write_gnuplot,
)
from boltwatch.geometry import IntervalViolation
from boltwatch.pipeline import PipelineConfig, run


def test_gt_examples():
    assert gt_from_edges([[(10.0, 40.0)]]) == pytest.approx(math.radians(30))
    assert gt_from_edges([[(0.0, 30.0)], [(30.0, 60.0)]]) == pytest.approx(math.radians(60))
    assert gt_from_edges([[(170.0, 5.0)]]) == pytest.approx(math.radians(15))


def test_wrap_range():
    assert wrap_line_delta(90.0) == 90.0
    assert wrap_line_delta(-90.0) == 90.0
    assert wrap_line_delta(-165.0) == 15.0
    assert wrap_line_delta(179.0) == -1.0


def test_gt_errors_and_warning():
    with pytest.raises(InvalidParameter):
        gt_from_edges([[]])
    with pytest.warns(IntervalViolation):
        gt_from_edges(EdgeLabelSet([[(0.0, 70.0)]]))


@given(st.lists(st.floats(-59, 59), min_size=1, max_size=6), st.floats(0, 180), st.randoms())
@settings(max_examples=50, deadline=None)
def test_gt_permutation_invariant(deltas, start, rnd):
    edges = [(start + 7 * i, start + 7 * i + d) for i, d in enumerate(deltas)]
    shuffled = edges[:]
    rnd.shuffle(shuffled)
    assert gt_from_edges([edges]) == pytest.approx(gt_from_edges([shuffled]), abs=1e-12)


def test_accuracy_examples():
    assert accuracy(8.42, 8.45) == pytest.approx(0.99645, abs=1e-5)
    assert accuracy(51.61, 54.32) == pytest.approx(0.95011, abs=1e-5)
    assert accuracy(3.3, 3.3) == 1.0
    assert accuracy(0.0, 1.0) == 0.0
    assert accuracy(5.0, 1.0) == 0.0
    with pytest.raises(UndefinedMetric):
        accuracy(0.2, 0.0)


@given(st.floats(-100, 100), st.floats(0.01, 100), st.floats(0.1, 10))
@settings(max_examples=100, deadline=None)
def test_accuracy_scale_invariant(phi, gt, k):
    assert accuracy(k * phi, k * gt) == pytest.approx(accuracy(phi, gt), abs=1e-9)


def test_score_bolts_zero_gt():
    scores = score_bolts({0: 0.01, 1: 2.0}, {0: 0.0, 1: 2.0})
    assert scores[0].accuracy is None and scores[0].abs_phi == 0.01
    assert scores[1].accuracy == 1.0


def test_read_gt(tmp_path):
    scene = synth.SceneConfig(duration=0.2, bolts=(synth.BoltSpec((96.0, 96.0), 30.0, 1,
                                                                   angle_knots=((0.0, 0.5), (0.2, 1.5))),))
    synth.generate(scene, tmp_path)
    assert read_gt(tmp_path / "gt.csv")[0] == pytest.approx(scene.bolts[0].angle_at(5 / 30) - 0.5)


def test_grid_basics():
    g = StudyGrid()
    assert len(g) == 256 and len(list(g.cells())) == 256
    assert StudyGrid.from_dict(json.loads(json.dumps(g.to_dict()))) == g
    with pytest.raises(InvalidParameter):
        StudyGrid(np_values=())
    with pytest.raises(InvalidParameter):
        StudyGrid.from_dict({"np": [1], "foo": 2})


@pytest.fixture(scope="module")
def small_scene():
    scene = synth.clean_rotation_scene(total=0.8, frames=25)
    r = synth.SceneRenderer(scene)
    frames = [r.render(scene.frame_time(k), k)[0] for k in range(scene.frame_count)]
    return scene, frames, AnnotationDetector({0: synth.initial_rois(scene)})


def test_single_cell_equals_direct_run(small_scene):
    scene, frames, det = small_scene
    grid = StudyGrid((3,), (6.0,), (5,), (30,))
    res = run_param_study(grid, frames, det, 0.8, scene.fps)
    direct = run(frames, det, PipelineConfig(), scene.fps).summary["bolts"]["0"]["final_phi"]
    assert len(res.rows) == 1 and res.rows[0].final_phi == direct


def test_failed_cell_is_recorded(small_scene, tmp_path):
    scene, frames, det = small_scene
    # six pyramid levels do not fit a 192 px frame
    grid = StudyGrid((3, 6), (6.0,), (5,), (30,))
    res = run_param_study(grid, frames, det, 0.8, scene.fps)
    assert len(res.rows) == 2 and len(res.failed()) == 1
    assert math.isnan(res.rows[1].accuracy)
    res.write_csv(tmp_path / "s.csv")
    res.write_summary(tmp_path / "s.json")
    back = read_study_csv(tmp_path / "s.csv")
    assert back.rows[0].accuracy == pytest.approx(res.rows[0].accuracy)
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["cells"] == 2 and len(doc["failed"]) == 1
    assert doc["marginal_means"]["np"] == {"3": pytest.approx(res.rows[0].accuracy)}


def test_zero_gt_study_rejected(small_scene):
    scene, frames, det = small_scene
    with pytest.raises(UndefinedMetric):
        run_param_study(StudyGrid((3,), (6.0,), (5,), (30,)), frames, det, 0.0)


def test_gnuplot_dump(small_scene, tmp_path):
    scene, frames, det = small_scene
    h = run(frames[:5], det, PipelineConfig(), scene.fps)
    write_gnuplot(h, tmp_path / "g.txt")
    lines = (tmp_path / "g.txt").read_text().splitlines()
    assert lines[0].startswith("# bolt 0")
    data = np.loadtxt(tmp_path / "g.txt")
    assert data.shape == (4, 4)

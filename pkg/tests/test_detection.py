import json
import logging

import numpy as np
import pytest

from boltwatch.detection import (
    AnnotationDetector, anchor_cost, blob_detector, estimate_anchor_boxes, lighting_augment,
    lighting_sections, load_manifest, mean_lightness, parse_manifest, validate_rois,
)
from boltwatch.errors import InvalidConfig, InvalidParameter
from boltwatch.features import Roi
from boltwatch.synth import BoltSpec, SceneConfig, render_frame


def test_annotation_carry_forward(tmp_path):
    doc = {"fps": 30, "frames": [{"file": "a.png", "rois": [{"x": 1, "y": 2, "w": 10, "h": 12}]},
                                 {"file": "b.png"}]}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    m = load_manifest(path, (64, 64))
    assert m.files[1] == tmp_path / "b.png" and m.fps == 30
    det = AnnotationDetector.from_manifest(m)
    assert det.detect(None, 37) == [Roi(1, 2, 10, 12, 1.0)]
    assert AnnotationDetector({}).detect(None, 5) == []
    assert AnnotationDetector({3: [Roi(0, 0, 9, 9)]}).detect(None, 2) == []


def test_manifest_validation(tmp_path):
    with pytest.raises(InvalidConfig):
        parse_manifest({"fps": 30, "frames": [{"file": "a", "rois": [{"x": 60, "y": 0, "w": 10, "h": 10}]}]},
                       size=(64, 64))
    with pytest.raises(InvalidConfig):
        parse_manifest({"frames": []})
    with pytest.raises(InvalidConfig):
        parse_manifest({"fps": 30, "frames": [{"rois": []}]})
    bad = tmp_path / "bad.json"
    bad.write_text('{"fps": 30,\n "frames": [,]}')
    with pytest.raises(InvalidConfig, match="line 2"):
        load_manifest(bad)


def test_validate_rois_drops_bad(caplog):
    with caplog.at_level(logging.WARNING):
        good = validate_rois([Roi(0, 0, 10, 10), Roi(90, 0, 20, 10)], 100, 100)
    assert good == [Roi(0, 0, 10, 10)]
    assert "discarding" in caplog.text


def test_blob_detector():
    assert blob_detector(np.zeros((50, 50))) == []
    scene = SceneConfig(width=200, height=120, bolts=(BoltSpec((60.0, 60.0), 20.0, 1, textured=False),
                                                      BoltSpec((140.0, 60.0), 20.0, 2, textured=False)),
                        noise_sigma=0.0, washer_level=0.1, background=0.05)
    frame, _ = render_frame(scene, 0.0)
    rois = blob_detector(frame, 0.3)
    assert len(rois) == 2
    single = SceneConfig(width=120, height=120, bolts=(BoltSpec((60.0, 60.0), 20.0, 1, textured=False),),
                         noise_sigma=0.0, washer_level=0.1, background=0.05)
    frame, _ = render_frame(single, 0.0)
    (roi,) = blob_detector(frame, 0.3)
    ys, xs = np.nonzero(frame > 0.3)
    assert roi.x <= xs.min() and roi.y <= ys.min()
    assert roi.x + roi.w - 1 >= xs.max() and roi.y + roi.h - 1 >= ys.max()
    assert xs.min() - roi.x <= 4 and roi.x + roi.w - 1 - xs.max() <= 4
    with pytest.raises(InvalidParameter):
        blob_detector(frame, 1.0)


def test_anchor_trivial_cases():
    assert estimate_anchor_boxes([(30, 20)] * 5, 1)[0].width == 30
    distinct = [(10, 10), (40, 20), (25, 50)]
    got = estimate_anchor_boxes(distinct * 3, 3, seed=1)
    assert sorted((a.width, a.height) for a in got) == sorted(distinct)
    with pytest.raises(InvalidParameter):
        estimate_anchor_boxes(distinct, 4)


def test_anchor_clusters_and_monotone_cost():
    rng = np.random.default_rng(0)
    a = rng.normal((50, 40), 1.5, (60, 2))
    b = rng.normal((30, 30), 1.5, (60, 2))
    boxes = np.vstack([a, b])
    hist = []
    anchors = estimate_anchor_boxes(boxes, 2, seed=3, history=hist)
    assert abs(anchors[0].width - a[:, 0].mean()) < 2 and abs(anchors[0].height - a[:, 1].mean()) < 2
    assert abs(anchors[1].width - b[:, 0].mean()) < 2 and abs(anchors[1].height - b[:, 1].mean()) < 2
    assert all(y <= x + 1e-12 for x, y in zip(hist, hist[1:]))
    assert anchor_cost(boxes, [(a.width, a.height) for a in anchors]) == pytest.approx(hist[-1])


def test_lighting_augment():
    rng = np.random.default_rng(1)
    imgs = [np.clip(rng.normal(m, 20, (16, 16, 3)), 0, 255).astype(np.uint8) for m in (40, 90, 120, 200)]
    out = lighting_augment(imgs)
    assert len(out) == 3 * len(imgs)
    means = np.array([mean_lightness(i) for i in imgs])
    section, targets = lighting_sections(means)
    for i, s in enumerate(section):
        others = [t for j, t in enumerate(targets) if j != s]
        for copy, target in zip(out[3 * i + 1 : 3 * i + 3], others):
            assert abs(mean_lightness(copy) - target) <= 2 / 255
    assert len(lighting_augment(imgs[:1])) == 3


def test_lighting_augment_unit_scale():
    img = np.full((8, 8, 3), 100, np.uint8)
    out = lighting_augment([img, img])
    for o in out:
        assert abs(mean_lightness(o) - mean_lightness(img)) <= 1 / 255


def test_lighting_augment_black_image_warns():
    with pytest.warns(UserWarning):
        out = lighting_augment([np.zeros((4, 4, 3), np.uint8), np.full((4, 4, 3), 200, np.uint8)])
    assert len(out) == 6

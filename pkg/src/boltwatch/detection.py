"""Bolt detector boundary, anchor-box clustering and lighting augmentation.

The CNN detector is replaced by anything with a ``detect(frame, frame_index)``
method returning ROIs; two reference detectors are provided.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import ndimage

from .errors import InvalidConfig, InvalidParameter
from .features import Roi
from .imagecore import hsl_to_rgb, rgb_to_hsl

log = logging.getLogger(__name__)


class Detector(Protocol):
    def detect(self, frame: np.ndarray, frame_index: int) -> list[Roi]: ...


def validate_rois(rois, width: int, height: int) -> list[Roi]:
    """Keep only ROIs that satisfy the in-frame invariant; detectors are not trusted."""
    good = []
    for roi in rois:
        if roi.within(width, height):
            good.append(roi)
        else:
            log.warning("discarding out-of-frame detection %s", roi)
    return good


@dataclass
class Manifest:
    fps: float
    files: list[Path]
    rois: dict[int, list[Roi]]

    @property
    def frame_count(self) -> int:
        return len(self.files)


def parse_manifest(doc: dict, base: Path = Path("."), size: tuple[int, int] | None = None) -> Manifest:
    """Validate a manifest document; ``size`` is (width, height) for ROI bounds checks."""
    try:
        fps = float(doc["fps"])
        frames = doc["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"manifest needs numeric 'fps' and a 'frames' list: {exc}") from exc
    if not fps > 0:
        raise InvalidConfig("manifest fps must be positive")
    files: list[Path] = []
    rois: dict[int, list[Roi]] = {}
    for k, entry in enumerate(frames):
        if "file" not in entry:
            raise InvalidConfig(f"frames[{k}] has no 'file'")
        files.append(base / entry["file"])
        if "rois" in entry:
            boxes = []
            for j, r in enumerate(entry["rois"]):
                try:
                    roi = Roi(int(r["x"]), int(r["y"]), int(r["w"]), int(r["h"]),
                              float(r.get("confidence", 1.0)))
                except (KeyError, TypeError, ValueError) as exc:
                    raise InvalidConfig(f"frames[{k}].rois[{j}] malformed: {exc}") from exc
                if size is not None and not roi.within(*size):
                    raise InvalidConfig(f"frames[{k}].rois[{j}] {roi} lies outside the {size[0]}x{size[1]} frame")
                boxes.append(roi)
            rois[k] = boxes
    return Manifest(fps, files, rois)


def load_manifest(path, size: tuple[int, int] | None = None) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return parse_manifest(doc, path.parent, size)


class AnnotationDetector:
    """Replays manifest ROIs; a frame without an entry reuses the nearest earlier one."""

    def __init__(self, rois: dict[int, list[Roi]]):
        self._keys = sorted(rois)
        self._rois = rois

    @classmethod
    def from_manifest(cls, manifest: Manifest) -> "AnnotationDetector":
        return cls(manifest.rois)

    def detect(self, frame=None, frame_index: int = 0) -> list[Roi]:
        pos = np.searchsorted(self._keys, frame_index, side="right") - 1
        if pos < 0:
            return []
        return [Roi(r.x, r.y, r.w, r.h, 1.0) for r in self._rois[self._keys[pos]]]


def blob_detector(frame, luminance_threshold: float = 0.3, min_area: int = 64,
                  max_area: int = 40000) -> list[Roi]:
    if not 0.0 < luminance_threshold < 1.0:
        raise InvalidParameter("luminance_threshold must lie in (0, 1)")
    frame = np.asarray(frame)
    height, width = frame.shape
    labels, count = ndimage.label(frame > luminance_threshold, structure=np.ones((3, 3)))
    if count == 0:
        return []
    areas = np.bincount(labels.ravel())
    rois = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or not (min_area <= areas[idx] <= max_area):
            continue
        y0, y1 = max(sl[0].start - 2, 0), min(sl[0].stop + 2, height)
        x0, x1 = max(sl[1].start - 2, 0), min(sl[1].stop + 2, width)
        roi = Roi(x0, y0, x1 - x0, y1 - y0, 1.0)
        if roi.within(width, height):
            rois.append(roi)
    return rois


@dataclass
class BlobDetector:
    luminance_threshold: float = 0.3
    min_area: int = 64
    max_area: int = 40000

    def detect(self, frame, frame_index: int = 0) -> list[Roi]:
        return blob_detector(frame, self.luminance_threshold, self.min_area, self.max_area)


@dataclass(frozen=True)
class AnchorBox:
    width: float
    height: float


def centered_iou(boxes: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """IoU of every (w, h) box against every centroid, both centred at the origin."""
    inter = np.minimum(boxes[:, None, 0], centroids[None, :, 0]) * np.minimum(
        boxes[:, None, 1], centroids[None, :, 1]
    )
    union = (boxes[:, 0] * boxes[:, 1])[:, None] + (centroids[:, 0] * centroids[:, 1])[None, :] - inter
    return inter / union


def anchor_cost(boxes, centroids) -> float:
    boxes = np.asarray(boxes, dtype=np.float64)
    d = 1.0 - centered_iou(boxes, np.asarray(centroids, dtype=np.float64))
    return float(d.min(axis=1).sum())


def estimate_anchor_boxes(boxes, k: int, seed: int = 0, max_rounds: int = 100,
                          history: list | None = None) -> list[AnchorBox]:
    """k-means on box shapes with ``1 - IoU`` distance, k-means++ seeding.

    If ``history`` is given, the total cost after each round is appended to it.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 2)
    if k < 1:
        raise InvalidParameter("k must be >= 1")
    if np.any(boxes <= 0):
        raise InvalidParameter("box sides must be positive")
    distinct = np.unique(boxes, axis=0)
    if k > len(distinct):
        raise InvalidParameter(f"k = {k} exceeds the {len(distinct)} distinct boxes")

    rng = np.random.default_rng(seed)
    centroids = [boxes[rng.integers(len(boxes))]]
    while len(centroids) < k:
        d = (1.0 - centered_iou(boxes, np.array(centroids))).min(axis=1)
        w = d**2
        centroids.append(boxes[rng.choice(len(boxes), p=w / w.sum())])
    centroids = np.array(centroids)

    assign = None
    for _ in range(max_rounds):
        new_assign = np.argmax(centered_iou(boxes, centroids), axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = boxes[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        if history is not None:
            history.append(anchor_cost(boxes, centroids))
    order = np.argsort(-(centroids[:, 0] * centroids[:, 1]), kind="stable")
    return [AnchorBox(float(w), float(h)) for w, h in centroids[order]]


def mean_lightness(img) -> float:
    return float(rgb_to_hsl(img)[..., 2].mean())


def _scale_to_mean(light: np.ndarray, target: float) -> np.ndarray:
    """Multiplicative lightness scale whose clamped result has the requested mean.

    Saturating pixels pull the clamped mean below ``target / mean`` scaling, so
    the factor is found by bisection; targets out of reach get the best effort.
    """
    def mean_at(scale: float) -> float:
        return float(np.clip(light * scale, 0.0, 1.0).mean())

    lo = hi = target / float(light.mean())
    if mean_at(hi) >= target:
        return np.clip(light * hi, 0.0, 1.0)
    for _ in range(64):
        if mean_at(hi) >= target:
            break
        hi *= 2.0
    else:
        return np.clip(light * hi, 0.0, 1.0)
    for _ in range(60):
        mid = (lo + hi) / 2.0
        if mean_at(mid) < target:
            lo = mid
        else:
            hi = mid
    return np.clip(light * hi, 0.0, 1.0)


def lighting_sections(means: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split the range of mean lightness into 3 equal-width sections.

    Returns the section index of every image and the mean lightness of each
    section (an empty section falls back to its midpoint).
    """
    lo, hi = float(means.min()), float(means.max())
    width = (hi - lo) / 3.0
    if width > 0:
        section = np.minimum(((means - lo) / width).astype(int), 2)
    else:
        section = np.zeros(len(means), dtype=int)
    targets = np.empty(3)
    for s in range(3):
        members = means[section == s]
        targets[s] = members.mean() if len(members) else lo + (s + 0.5) * width
    return section, targets


def lighting_augment(images) -> list[np.ndarray]:
    """Each image followed by two copies relit to the other two sections' mean lightness."""
    images = list(images)
    if not images:
        raise InvalidParameter("need at least one image")
    hsl = [rgb_to_hsl(img) for img in images]
    means = np.array([h[..., 2].mean() for h in hsl])
    section, targets = lighting_sections(means)
    out = []
    for img, h, m, s in zip(images, hsl, means, section):
        out.append(np.array(img, dtype=np.uint8, copy=True))
        for other in (x for x in range(3) if x != s):
            if m <= 0.0:
                warnings.warn("image has zero mean lightness; emitting an unscaled copy")
                out.append(np.array(img, dtype=np.uint8, copy=True))
                continue
            relit = h.copy()
            relit[..., 2] = _scale_to_mean(h[..., 2], float(targets[other]))
            out.append(hsl_to_rgb(relit))
    return out

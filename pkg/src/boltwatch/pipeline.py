"""Detect-track loop: per-bolt KLT tracking, rigid fits, accumulation, re-detection."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .detection import Detector, validate_rois
from .errors import EstimationFailure, InvalidParameter
from .features import (
    DEFAULT_FILTER_DIM,
    DEFAULT_MAX_POINTS,
    DEFAULT_MIN_QUALITY,
    Roi,
    detect_corners,
)
from .geometry import (
    MsacConfig,
    RigidTransform,
    apply_matrix,
    extract_angle,
    fit_rigid_msac,
    transform_about_point,
)
from .imagecore import Pyramid, build_pyramid
from .klt import TrackerConfig, track_array

ACTIVE = "active"
AWAITING = "awaiting_redetect"
TERMINATED = "terminated"

EVENTS = ("none", "redetect", "lost", "spawn", "terminate")
# when several events hit one track in one frame the history row shows the strongest
_EVENT_RANK = {"none": 0, "lost": 1, "redetect": 2, "spawn": 3, "terminate": 4}

HISTORY_HEADER = ["frame", "time_s", "bolt_id", "inc_rad", "cum_rad", "n_fps", "event"]


@dataclass(frozen=True)
class PipelineConfig:
    tracker: TrackerConfig = TrackerConfig()
    msac: MsacConfig = MsacConfig()
    redetect_min_fp: int = 7
    redetect_fraction: float | None = None
    associate_iou: float = 0.3
    periodic_redetect_every: int | None = None
    redetect: bool = True
    terminate_after: int = 30
    min_quality: float = DEFAULT_MIN_QUALITY
    filter_dim: int = DEFAULT_FILTER_DIM
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        if self.redetect_min_fp < 2:
            raise InvalidParameter("redetect_min_fp must be at least the 2-point minimal sample")
        if not 0.0 < self.associate_iou < 1.0:
            raise InvalidParameter("associate_iou must lie in (0, 1)")
        if self.redetect_fraction is not None and not 0.0 < self.redetect_fraction <= 1.0:
            raise InvalidParameter("redetect_fraction must lie in (0, 1]")
        if self.periodic_redetect_every is not None and self.periodic_redetect_every < 1:
            raise InvalidParameter("periodic_redetect_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidParameter(f"unknown pipeline fields: {sorted(unknown)}")
        if "tracker" in d:
            d["tracker"] = TrackerConfig(**d["tracker"])
        if "msac" in d:
            d["msac"] = MsacConfig(**d["msac"])
        return cls(**d)


@dataclass
class BoltTrack:
    id: int
    roi: Roi
    points: np.ndarray
    initial_fp_count: int
    phi: float = 0.0
    status: str = ACTIVE
    events: list[tuple[int, str]] = field(default_factory=list)
    missed: int = 0
    corners: np.ndarray | None = None
    fp_samples: list[int] = field(default_factory=list)
    last_tracked: int = 0

    def loss_threshold(self, cfg: PipelineConfig) -> int:
        if cfg.redetect_fraction is None:
            return cfg.redetect_min_fp
        return max(cfg.redetect_min_fp, math.ceil(cfg.redetect_fraction * self.initial_fp_count))

    def log(self, frame: int, kind: str) -> None:
        self.events.append((frame, kind))

    def event_at(self, frame: int) -> str:
        kinds = [k for f, k in self.events if f == frame]
        return max(kinds, key=_EVENT_RANK.__getitem__) if kinds else "none"


@dataclass(frozen=True)
class HistoryRow:
    frame: int
    time_s: float
    bolt_id: int
    inc_rad: float
    cum_rad: float
    n_fps: int
    event: str


@dataclass
class RotationHistory:
    rows: list[HistoryRow] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def for_bolt(self, bolt_id: int) -> list[HistoryRow]:
        return [r for r in self.rows if r.bolt_id == bolt_id]

    def final_phi(self) -> dict[int, float]:
        return {int(k): v["final_phi"] for k, v in self.summary.get("bolts", {}).items()}

    def write_csv(self, path, sign: float = 1.0) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_HEADER)
            for r in self.rows:
                w.writerow([r.frame, f"{r.time_s:.12g}", r.bolt_id, f"{sign * r.inc_rad + 0.0:.12g}",
                            f"{sign * r.cum_rad + 0.0:.12g}", r.n_fps, r.event])

    def write_summary(self, path, sign: float = 1.0) -> None:
        doc = json.loads(json.dumps(self.summary))
        for bolt in doc.get("bolts", {}).values():
            bolt["final_phi"] = sign * bolt["final_phi"] + 0.0
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")


def read_history(path) -> list[HistoryRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(HistoryRow(int(rec["frame"]), float(rec["time_s"]), int(rec["bolt_id"]),
                                   float(rec["inc_rad"]), float(rec["cum_rad"]), int(rec["n_fps"]),
                                   rec["event"]))
    return rows


def seed_points(frame: np.ndarray, roi: Roi, cfg: PipelineConfig) -> np.ndarray:
    fps = detect_corners(frame, roi, cfg.min_quality, cfg.filter_dim, cfg.max_points)
    return np.array([(p.x, p.y) for p in fps], dtype=np.float64).reshape(-1, 2)


def _box_corners(roi: Roi) -> np.ndarray:
    x0, y0 = roi.x - 0.5, roi.y - 0.5
    x1, y1 = roi.x + roi.w - 0.5, roi.y + roi.h - 0.5
    return np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def _moved_roi(roi: Roi, center: np.ndarray, width: int, height: int) -> Roi:
    x = int(round(center[0] - (roi.w - 1) / 2.0))
    y = int(round(center[1] - (roi.h - 1) / 2.0))
    x = min(max(x, 0), width - roi.w)
    y = min(max(y, 0), height - roi.h)
    return Roi(x, y, roi.w, roi.h, roi.confidence)


def new_track(track_id: int, frame: np.ndarray, roi: Roi, cfg: PipelineConfig, frame_index: int) -> BoltTrack:
    pts = seed_points(frame, roi, cfg)
    track = BoltTrack(track_id, roi, pts, len(pts), corners=_box_corners(roi), last_tracked=frame_index)
    if len(pts) < track.loss_threshold(cfg):
        track.status = AWAITING
    return track


def init_tracks(frame: np.ndarray, detector: Detector, cfg: PipelineConfig, frame_index: int = 0) -> list[BoltTrack]:
    h, w = frame.shape
    rois = validate_rois(detector.detect(frame, frame_index), w, h)
    return [new_track(i, frame, roi, cfg, frame_index) for i, roi in enumerate(rois)]


def _fit_track(track: BoltTrack, src: np.ndarray, dst: np.ndarray, cfg: PipelineConfig,
               frame_index: int, shape: tuple[int, int]) -> float | None:
    """MSAC-fit the track's motion and move its box; returns the angle increment."""
    rng = np.random.default_rng([cfg.msac.seed, frame_index, track.id])
    try:
        model, inliers = fit_rigid_msac(src, dst, cfg.msac, rng)
    except EstimationFailure:
        return None
    inc = extract_angle(model)
    a, b = src[inliers].mean(axis=0)
    shift = dst[inliers].mean(axis=0) - (a, b)
    about = transform_about_point(RigidTransform(model.theta, *shift), a, b)
    if track.corners is not None:
        track.corners = apply_matrix(about, track.corners)
    center = apply_matrix(about, [track.roi.center])[0]
    track.roi = _moved_roi(track.roi, center, shape[1], shape[0])
    track.points = dst[inliers]
    return inc


def step(
    tracks: list[BoltTrack],
    prev: Pyramid,
    nxt: Pyramid,
    next_frame: np.ndarray,
    detector: Detector,
    cfg: PipelineConfig,
    frame_index: int,
) -> dict[int, float]:
    """Advance every track from ``prev`` to ``nxt``; returns per-track angle increments.

    ``tracks`` is updated in place; spawned tracks are appended.
    """
    shape = next_frame.shape
    increments: dict[int, float] = {}
    active = [t for t in tracks if t.status == ACTIVE and len(t.points)]
    if active:
        all_pts = np.concatenate([t.points for t in active])
        out, _fb, code = track_array(prev, nxt, all_pts, cfg.tracker)
        start = 0
        for t in active:
            n = len(t.points)
            src, dst, ok = t.points, out[start : start + n], code[start : start + n] == 0
            start += n
            threshold = t.loss_threshold(cfg)
            inc = None
            if ok.sum() >= max(2, threshold):
                inc = _fit_track(t, src[ok], dst[ok], cfg, frame_index, shape)
            if inc is None:
                t.points = dst[ok]
                t.status = AWAITING
                t.log(frame_index, "lost")
                continue
            t.phi += inc
            increments[t.id] = inc
            t.last_tracked = frame_index
            if len(t.points) < threshold:
                t.status = AWAITING
                t.log(frame_index, "lost")

    for t in tracks:
        if t.status == ACTIVE and len(t.points) == 0:
            t.status = AWAITING
            t.log(frame_index, "lost")

    if not cfg.redetect:
        for t in tracks:
            if t.status == AWAITING:
                t.status = TERMINATED
                t.log(frame_index, "terminate")
        return increments

    periodic = cfg.periodic_redetect_every is not None and frame_index % cfg.periodic_redetect_every == 0
    if periodic or any(t.status == AWAITING for t in tracks):
        _redetect(tracks, next_frame, detector, cfg, frame_index, periodic)
    return increments


def _redetect(tracks, frame, detector, cfg, frame_index, periodic) -> None:
    h, w = frame.shape
    rois = validate_rois(detector.detect(frame, frame_index), w, h)
    live = [t for t in tracks if t.status != TERMINATED]
    pairs = sorted(
        ((t.roi.iou(r), ti, ri) for ti, t in enumerate(live) for ri, r in enumerate(rois)),
        key=lambda p: (-p[0], p[1], p[2]),
    )
    used_t, used_r = set(), set()
    for iou, ti, ri in pairs:
        if iou < cfg.associate_iou:
            break
        if ti in used_t or ri in used_r:
            continue
        used_t.add(ti)
        used_r.add(ri)
        t = live[ti]
        if t.status == AWAITING or periodic:
            pts = seed_points(frame, rois[ri], cfg)
            t.roi = rois[ri]
            t.corners = _box_corners(rois[ri])
            t.points = pts
            t.initial_fp_count = len(pts)
            if len(pts) >= t.loss_threshold(cfg):
                t.status = ACTIVE
                t.missed = 0
                t.log(frame_index, "redetect")
            else:
                t.status = AWAITING
                t.missed += 1
    for ti, t in enumerate(live):
        if t.status == AWAITING and ti not in used_t:
            t.missed += 1
        if t.status == AWAITING and t.missed >= cfg.terminate_after:
            t.status = TERMINATED
            t.log(frame_index, "terminate")
    next_id = max((t.id for t in tracks), default=-1) + 1
    for ri, roi in enumerate(rois):
        if ri in used_r:
            continue
        t = new_track(next_id, frame, roi, cfg, frame_index)
        t.log(frame_index, "spawn")
        tracks.append(t)
        next_id += 1


def run(
    frames: Iterable[np.ndarray],
    detector: Detector,
    cfg: PipelineConfig = PipelineConfig(),
    fps: float = 30.0,
) -> RotationHistory:
    """Run the full detect-track loop over an iterable of gray frames."""
    it: Iterator[np.ndarray] = iter(frames)
    try:
        first = next(it)
    except StopIteration:
        raise InvalidParameter("need at least 2 frames") from None
    tracks = init_tracks(first, detector, cfg)
    prev = build_pyramid(first, cfg.tracker.np)
    history = RotationHistory()
    n_frames = 1
    for k, frame in enumerate(it, start=1):
        n_frames += 1
        nxt = build_pyramid(frame, cfg.tracker.np)
        before = {t.id for t in tracks if t.status != TERMINATED}
        incs = step(tracks, prev, nxt, frame, detector, cfg, k)
        t_s = k / fps
        for t in tracks:
            if t.status == TERMINATED and (t.id not in before or t.event_at(k) == "none"):
                continue
            inc = incs.get(t.id, 0.0)
            n = len(t.points) if t.status != TERMINATED else 0
            t.fp_samples.append(n)
            history.rows.append(HistoryRow(k, t_s, t.id, inc, t.phi, n, t.event_at(k)))
        prev = nxt
    if n_frames < 2:
        raise InvalidParameter("need at least 2 frames")
    history.summary = summarize(tracks, n_frames, fps)
    return history


def summarize(tracks: list[BoltTrack], n_frames: int, fps: float) -> dict:
    bolts = {}
    for t in tracks:
        counts = {kind: sum(1 for _, k in t.events if k == kind) for kind in EVENTS[1:]}
        lost_frames = [f for f, k in t.events if k == "lost"]
        bolts[str(t.id)] = {
            "final_phi": t.phi,
            "status": t.status,
            "events": counts,
            "first_lost_frame": lost_frames[0] if lost_frames else None,
            "last_tracked_frame": t.last_tracked,
            "tracked_to_end": t.status == ACTIVE and t.last_tracked == n_frames - 1,
            "mean_fps": float(np.mean(t.fp_samples)) if t.fp_samples else float(len(t.points)),
            "initial_fp_count": t.initial_fp_count,
        }
    return {"frames": n_frames, "fps": fps, "bolts": bolts}

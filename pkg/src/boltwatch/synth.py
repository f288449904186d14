"""Synthetic rotating-bolt scenes with exact ground-truth angles.

Each bolt is a flat-top hexagon with a seeded speckle texture that turns
rigidly with it, sitting on a static (weakly textured) washer.  Frames are
rasterized with supersampling and box-downsampled, then scaled by the
lighting multiplier, perturbed by Gaussian noise and clamped to ``[0, 1]``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidConfig
from .features import Roi
from .imagecore import write_image

TEXTURE_FADE = 3.0
WASHER_RATIO = 1.35


@dataclass(frozen=True)
class BoltSpec:
    center: tuple[float, float]
    circumradius: float = 36.0
    texture_seed: int = 0
    # piecewise-linear (time s, angle rad) knots
    angle_knots: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    textured: bool = True
    # piecewise-linear (time s, dx px, dy px) translation of bolt and washer together
    shift_knots: tuple[tuple[float, float, float], ...] = ((0.0, 0.0, 0.0),)

    def angle_at(self, t: float) -> float:
        knots = self.angle_knots
        if len(knots) == 1:
            return float(knots[0][1])
        return float(np.interp(t, [k[0] for k in knots], [k[1] for k in knots]))

    def center_at(self, t: float) -> tuple[float, float]:
        knots = self.shift_knots
        if len(knots) == 1:
            dx, dy = knots[0][1], knots[0][2]
        else:
            ts = [k[0] for k in knots]
            dx = float(np.interp(t, ts, [k[1] for k in knots]))
            dy = float(np.interp(t, ts, [k[2] for k in knots]))
        return (self.center[0] + dx, self.center[1] + dy)

    def centers(self) -> list[tuple[float, float]]:
        """Every position the bolt visits (the knots bound the path)."""
        return [(self.center[0] + k[1], self.center[1] + k[2]) for k in self.shift_knots]


@dataclass(frozen=True)
class SceneConfig:
    width: int = 192
    height: int = 192
    fps: float = 30.0
    duration: float = 1.0
    bolts: tuple[BoltSpec, ...] = ()
    # piecewise-constant (start time s, multiplier) steps
    lighting: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    noise_sigma: float = 0.01
    noise_seed: int = 0
    background: float = 0.18
    clutter: tuple[tuple[float, float, float, float, float], ...] = ()
    washer_level: float = 0.36
    washer_contrast: float = 0.03
    face_level: float = 0.58
    speckle_contrast: float = 0.32
    speckle_density: float = 0.05
    supersample: int = 4

    @property
    def frame_count(self) -> int:
        return int(round(self.duration * self.fps))

    def frame_time(self, k: int) -> float:
        return k / self.fps

    def multiplier_at(self, t: float) -> float:
        level = self.lighting[0][1]
        for start, mult in self.lighting:
            if t >= start:
                level = mult
        return float(level)

    def validate(self) -> None:
        if self.width < 16 or self.height < 16:
            raise InvalidConfig("frame must be at least 16x16")
        if not (self.fps > 0 and self.duration > 0):
            raise InvalidConfig("fps and duration must be positive")
        if self.supersample < 1:
            raise InvalidConfig("supersample must be >= 1")
        if not self.lighting or any(not (0.0 < m <= 2.0) for _, m in self.lighting):
            raise InvalidConfig("lighting multipliers must lie in (0, 2]")
        for i, bolt in enumerate(self.bolts):
            r = bolt.circumradius
            if r < 12:
                raise InvalidConfig(f"bolt {i}: circumradius {r} < 12 px")
            for cx, cy in bolt.centers():
                if cx - 2 * r < 0 or cy - 2 * r < 0 or cx + 2 * r > self.width - 1 or cy + 2 * r > self.height - 1:
                    raise InvalidConfig(f"bolt {i}: needs a margin of one circumradius inside the frame")
            for name in ("angle_knots", "shift_knots"):
                ts = [k[0] for k in getattr(bolt, name)]
                if any(b <= a for a, b in zip(ts, ts[1:])):
                    raise InvalidConfig(f"bolt {i}: {name} times must increase")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        bolts = []
        for b in d.pop("bolts", []):
            b = dict(b)
            b["center"] = tuple(b["center"])
            b["angle_knots"] = tuple(tuple(k) for k in b.get("angle_knots", [(0.0, 0.0)]))
            b["shift_knots"] = tuple(tuple(k) for k in b.get("shift_knots", [(0.0, 0.0, 0.0)]))
            bolts.append(BoltSpec(**b))
        d["bolts"] = tuple(bolts)
        if "lighting" in d:
            d["lighting"] = tuple(tuple(s) for s in d["lighting"])
        if "clutter" in d:
            d["clutter"] = tuple(tuple(c) for c in d["clutter"])
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise InvalidConfig(f"unknown scene fields: {sorted(unknown)}")
        return cls(**d)


def hexagon_mask(u: np.ndarray, v: np.ndarray, r: float) -> np.ndarray:
    """Flat-top hexagon with vertices at multiples of 60 degrees."""
    return (np.abs(v) <= r * math.sqrt(3) / 2) & (math.sqrt(3) * np.abs(u) + np.abs(v) <= math.sqrt(3) * r)


def hexagon_depth(u: np.ndarray, v: np.ndarray, r: float) -> np.ndarray:
    """Distance inside the flat-top hexagon's boundary (negative outside)."""
    apothem = r * math.sqrt(3) / 2
    return apothem - np.maximum(np.abs(v), (math.sqrt(3) * np.abs(u) + np.abs(v)) / 2)


def roi_for_bolt(bolt: BoltSpec, width: int, height: int, t: float = 0.0) -> Roi:
    cx, cy = bolt.center_at(t)
    r = bolt.circumradius
    x0 = max(int(math.floor(cx - r)) - 2, 0)
    y0 = max(int(math.floor(cy - r)) - 2, 0)
    x1 = min(int(math.ceil(cx + r)) + 2, width - 1)
    y1 = min(int(math.ceil(cy + r)) + 2, height - 1)
    return Roi(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def _blob_field(rng: np.random.Generator, half: float, step: float, density: float, contrast: float,
                sigma_range: tuple[float, float]) -> np.ndarray:
    """Gaussian blobs on a square grid covering ``[-half, half]^2`` (pixel units), soft-clipped to ``contrast``."""
    n = int(round(2 * half / step)) + 1
    coords = -half + step * np.arange(n)
    count = max(1, int(round(density * (2 * half) ** 2)))
    cx = rng.uniform(-half, half, count)
    cy = rng.uniform(-half, half, count)
    sig = rng.uniform(*sigma_range, count)
    amp = contrast * rng.choice([-1.0, 1.0], count) * rng.uniform(0.5, 1.0, count)
    field_ = np.zeros((n, n))
    for x, y, s, a in zip(cx, cy, sig, amp):
        reach = 3.5 * s
        i0, i1 = np.searchsorted(coords, [y - reach, y + reach])
        j0, j1 = np.searchsorted(coords, [x - reach, x + reach])
        gy = np.exp(-0.5 * ((coords[i0:i1] - y) / s) ** 2)
        gx = np.exp(-0.5 * ((coords[j0:j1] - x) / s) ** 2)
        field_[i0:i1, j0:j1] += a * np.outer(gy, gx)
    # soft saturation: overlapping blobs would otherwise make a few corners dwarf the rest
    return contrast * np.tanh(field_ / contrast)


@lru_cache(maxsize=64)
def _face_texture(seed: int, radius: float, ss: int, density: float, contrast: float) -> np.ndarray:
    rng = np.random.default_rng([seed, 1])
    return _blob_field(rng, radius + 2.0, 1.0 / ss, density, contrast, (1.0, 2.2))


def _patch_grid(center: tuple[float, float], radius: float, ss: int):
    """Integer pixel bounds of the bolt patch and its supersample coordinates."""
    cx, cy = center
    reach = WASHER_RATIO * radius + 2.0
    x0, x1 = int(math.floor(cx - reach)), int(math.ceil(cx + reach))
    y0, y1 = int(math.floor(cy - reach)), int(math.ceil(cy + reach))
    sub = (np.arange(ss) + 0.5) / ss - 0.5
    xs = (np.arange(x0, x1 + 1)[:, None] + sub).ravel()
    ys = (np.arange(y0, y1 + 1)[:, None] + sub).ravel()
    return (x0, x1, y0, y1), xs, ys


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    """Fraction of each unit pixel [k-0.5, k+0.5] covered by [lo, hi]."""
    k = np.arange(n)
    return np.clip(np.minimum(k + 0.5, hi) - np.maximum(k - 0.5, lo), 0.0, 1.0)


class SceneRenderer:
    """Caches textures and static patches so that frames render quickly."""

    def __init__(self, scene: SceneConfig):
        scene.validate()
        self.scene = scene
        base = np.full((scene.height, scene.width), scene.background)
        for x, y, w, h, level in scene.clutter:
            cov = np.outer(_coverage(y, y + h, scene.height), _coverage(x, x + w, scene.width))
            base = base * (1 - cov) + level * cov
        self.base = base
        self._washers = []
        for bolt in scene.bolts:
            rng = np.random.default_rng([bolt.texture_seed, 2])
            half = WASHER_RATIO * bolt.circumradius + 3.0
            tex = _blob_field(rng, half, 1.0 / scene.supersample, scene.speckle_density,
                              scene.washer_contrast, (1.0, 2.0))
            self._washers.append((half, tex))
        self._static: dict = {}

    @staticmethod
    def _downsample(a: np.ndarray, ss: int) -> np.ndarray:
        h, w = a.shape[0] // ss, a.shape[1] // ss
        return a.reshape(h, ss, w, ss).mean(axis=(1, 3))

    def _static_patch(self, i: int, center: tuple[float, float]) -> dict:
        """Washer and background around bolt ``i`` at ``center``, supersampled."""
        key = (i, center)
        if key in self._static:
            return self._static[key]
        scene, bolt = self.scene, self.scene.bolts[i]
        ss = scene.supersample
        bounds, xs, ys = _patch_grid(center, bolt.circumradius, ss)
        x0, x1, y0, y1 = bounds
        dx = np.broadcast_to(xs[None, :] - center[0], (len(ys), len(xs)))
        dy = np.broadcast_to(ys[:, None] - center[1], (len(ys), len(xs)))
        rr = np.hypot(dx, dy)
        half, tex = self._washers[i]
        wvals = ndimage.map_coordinates(tex, [(dy + half) * ss, (dx + half) * ss], order=1, mode="nearest")
        region = np.repeat(np.repeat(self.base[y0 : y1 + 1, x0 : x1 + 1], ss, 0), ss, 1)
        near = rr <= bolt.circumradius + 1.0
        patch = {
            "bounds": bounds,
            "dx": dx[near],
            "dy": dy[near],
            "near": near,
            "static": np.where(rr <= WASHER_RATIO * bolt.circumradius, scene.washer_level + wvals, region),
        }
        if len(bolt.shift_knots) == 1:
            self._static[key] = patch
        return patch

    def clean_frame(self, t: float) -> tuple[np.ndarray, list[float]]:
        """Noise-free, unlit frame plus the per-bolt angles at ``t``."""
        scene = self.scene
        ss = scene.supersample
        frame = self.base.copy()
        angles = []
        for i, bolt in enumerate(scene.bolts):
            theta = bolt.angle_at(t)
            angles.append(theta)
            patch = self._static_patch(i, bolt.center_at(t))
            dx, dy = patch["dx"], patch["dy"]
            c, s = math.cos(theta), math.sin(theta)
            u = dx * c + dy * s
            v = -dx * s + dy * c
            inside = hexagon_mask(u, v, bolt.circumradius)
            face = np.full(u.shape, scene.face_level)
            if bolt.textured:
                tex = _face_texture(bolt.texture_seed, bolt.circumradius, ss,
                                    scene.speckle_density, scene.speckle_contrast)
                half = bolt.circumradius + 2.0
                speckle = ndimage.map_coordinates(tex, [(v + half) * ss, (u + half) * ss], order=1, mode="nearest")
                # fade the speckle out at the rim so blobs cut by the edge do not make outsized corners
                fade = np.clip(hexagon_depth(u, v, bolt.circumradius) / TEXTURE_FADE, 0.0, 1.0)
                face = face + speckle * fade
            vals = patch["static"].copy()
            near = patch["near"]
            vals[near] = np.where(inside, face, vals[near])
            x0, x1, y0, y1 = patch["bounds"]
            frame[y0 : y1 + 1, x0 : x1 + 1] = self._downsample(vals, ss)
        return frame, angles

    def render(self, t: float, frame_index: int | None = None) -> tuple[np.ndarray, list[float]]:
        scene = self.scene
        if not (0.0 <= t <= scene.duration):
            raise InvalidConfig(f"t = {t} outside [0, {scene.duration}]")
        frame, angles = self.clean_frame(t)
        frame = frame * scene.multiplier_at(t)
        if scene.noise_sigma > 0:
            key = frame_index if frame_index is not None else int(round(t * 1e6))
            rng = np.random.default_rng([scene.noise_seed, key])
            frame = frame + rng.normal(0.0, scene.noise_sigma, frame.shape)
        return np.clip(frame, 0.0, 1.0), angles

    def frames(self):
        for k in range(self.scene.frame_count):
            t = self.scene.frame_time(k)
            yield k, t, self.render(t, k)


def render_frame(scene: SceneConfig, t: float, frame_index: int | None = None) -> tuple[np.ndarray, list[float]]:
    return SceneRenderer(scene).render(t, frame_index)


def ground_truth(scene: SceneConfig) -> list[tuple[int, float, int, float]]:
    rows = []
    for k in range(scene.frame_count):
        t = scene.frame_time(k)
        for i, bolt in enumerate(scene.bolts):
            rows.append((k, t, i, bolt.angle_at(t)))
    return rows


def rois_at(scene: SceneConfig, t: float = 0.0) -> list[Roi]:
    return [roi_for_bolt(b, scene.width, scene.height, t) for b in scene.bolts]


def initial_rois(scene: SceneConfig) -> list[Roi]:
    return rois_at(scene, 0.0)


def is_moving(scene: SceneConfig) -> bool:
    return any(len(b.shift_knots) > 1 for b in scene.bolts)


def oracle_rois(scene: SceneConfig) -> dict[int, list[Roi]]:
    """Per-frame ROIs from the bolt geometry; only frame 0 when nothing translates."""
    if not is_moving(scene):
        return {0: initial_rois(scene)}
    return {k: rois_at(scene, scene.frame_time(k)) for k in range(scene.frame_count)}


def fmt(x: float) -> str:
    return f"{x:.12g}"


def generate(scene: SceneConfig, out_dir, ext: str = "png") -> Path:
    """Write frames, ``manifest.json`` and ``gt.csv``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    renderer = SceneRenderer(scene)
    files = []
    for k, _t, (img, _angles) in renderer.frames():
        name = f"frame_{k:06d}.{ext}"
        write_image(out / name, img)
        files.append(name)
    frames = [{"file": name} for name in files]
    for k, rois in oracle_rois(scene).items():
        frames[k]["rois"] = [roi.to_dict() for roi in rois]
    manifest = {"fps": scene.fps, "frames": frames}
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    with open(out / "gt.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "time_s", "bolt_id", "theta_rad"])
        for k, t, i, theta in ground_truth(scene):
            w.writerow([k, fmt(t), i, fmt(theta)])
    (out / "scene.json").write_text(json.dumps(scene.to_dict(), indent=1) + "\n")
    return manifest_path


def linear_profile(total: float, scene_frames: int, fps: float) -> tuple[tuple[float, float], ...]:
    """Knots for a constant-rate turn reaching ``total`` radians at the last frame."""
    return ((0.0, 0.0), ((scene_frames - 1) / fps, total))


def clean_rotation_scene(total: float = 8.45, frames: int = 441, seed: int = 6) -> SceneConfig:
    fps = 30.0
    bolt = BoltSpec(center=(96.0, 96.0), circumradius=36.0, texture_seed=seed,
                    angle_knots=linear_profile(total, frames, fps))
    return SceneConfig(width=192, height=192, fps=fps, duration=frames / fps, bolts=(bolt,),
                       noise_seed=seed)


def static_scene(n_bolts: int = 5, frames: int = 420, seed: int = 11) -> SceneConfig:
    fps = 30.0
    centers = [(80, 80), (208, 80), (336, 80), (80, 208), (208, 208), (336, 208)][:n_bolts]
    bolts = tuple(BoltSpec(center=(float(x), float(y)), circumradius=30.0, texture_seed=seed + i)
                  for i, (x, y) in enumerate(centers))
    return SceneConfig(width=416, height=288, fps=fps, duration=frames / fps, bolts=bolts,
                       noise_seed=seed, clutter=((150.0, 250.0, 120.0, 20.0, 0.5),))


def six_bolt_scene(frames: int = 60, seed: int = 21, turn: float = 0.0) -> SceneConfig:
    fps = 30.0
    centers = [(80, 100), (208, 100), (336, 100), (80, 300), (208, 300), (336, 300)]
    bolts = []
    for i, (x, y) in enumerate(centers):
        knots = linear_profile(turn, frames, fps) if i == 5 else ((0.0, 0.0),)
        bolts.append(BoltSpec(center=(float(x), float(y)), circumradius=32.0, texture_seed=seed + i,
                              angle_knots=knots))
    return SceneConfig(width=416, height=416, fps=fps, duration=frames / fps, bolts=tuple(bolts),
                       noise_seed=seed)


def lighting_switch_scene(total: float = 13.25, seconds: float = 35.0, seed: int = 7,
                          period: float = 10.0, bright: float = 1.5) -> SceneConfig:
    fps = 30.0
    frames = int(round(seconds * fps))
    steps = [(0.0, 1.0)]
    t = period
    while t < seconds:
        steps.append((t, bright if len(steps) % 2 == 1 else 1.0))
        t += period
    bolt = BoltSpec(center=(96.0, 96.0), circumradius=36.0, texture_seed=seed,
                    angle_knots=linear_profile(total, frames, fps))
    return SceneConfig(width=192, height=192, fps=fps, duration=seconds, bolts=(bolt,),
                       lighting=tuple(steps), noise_seed=seed)


def study_scene(frames: int = 120, seed: int = 3, rate: float = 0.02, burst_rate: float = 0.15,
                burst_frames: int = 10, slip_px: float = 40.0, slip_frames: int = 2) -> SceneConfig:
    """Steady turn at ``rate`` rad/frame interrupted by a mid-video slip at ``burst_rate``.

    ``slip_px`` additionally slides the bolt sideways over ``slip_frames`` frames at
    the start of the burst; the frame is widened to keep the bolt inside.
    """
    fps = 30.0
    start = frames // 2 - burst_frames // 2
    a0 = rate * start
    a1 = a0 + burst_rate * burst_frames
    end = frames - 1
    knots = ((0.0, 0.0), (start / fps, a0), ((start + burst_frames) / fps, a1),
             (end / fps, a1 + rate * (end - start - burst_frames)))
    shift = ((0.0, 0.0, 0.0),)
    if slip_px:
        shift = ((0.0, 0.0, 0.0), (start / fps, 0.0, 0.0), ((start + slip_frames) / fps, slip_px, 0.0))
    width = 192 + int(math.ceil(abs(slip_px)))
    cx = 96.0 if slip_px >= 0 else width - 96.0
    bolt = BoltSpec(center=(cx, 96.0), circumradius=36.0, texture_seed=seed, angle_knots=knots,
                    shift_knots=shift)
    return SceneConfig(width=width, height=192, fps=fps, duration=frames / fps, bolts=(bolt,),
                       noise_seed=seed)

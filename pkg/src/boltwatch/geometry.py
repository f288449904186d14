"""Rigid 2-D transforms under the row-vector convention ``[x y 1] @ T``.

``T = [[cos t, sin t, 0], [-sin t, cos t, 0], [tx, ty, 1]]``, so a point maps to
``(x cos t - y sin t + tx, x sin t + y cos t + ty)``.  In image coordinates
(y down) a positive angle turns clockwise on screen.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, EstimationFailure, InvalidParameter

INTERVAL_LIMIT = math.pi / 3


class IntervalViolation(UserWarning):
    pass


def wrap_angle(theta: float) -> float:
    """Map an angle into (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class RigidTransform:
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(math.atan2(m[0, 1], m[0, 0]), float(m[2, 0]), float(m[2, 1]))

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, s, 0.0], [-s, c, 0.0], [self.tx, self.ty, 1.0]])

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.column_stack(
            [pts[:, 0] * c - pts[:, 1] * s + self.tx, pts[:, 0] * s + pts[:, 1] * c + self.ty]
        )

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Apply ``self`` first, then ``other``."""
        return RigidTransform.from_matrix(self.matrix() @ other.matrix())

    def inverse(self) -> "RigidTransform":
        return RigidTransform.from_matrix(np.linalg.inv(self.matrix()))


@dataclass(frozen=True)
class MsacConfig:
    inlier_threshold: float = 1.5
    confidence: float = 0.99
    max_trials: int = 500
    seed: int = 0

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise InvalidParameter("inlier_threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise InvalidParameter("confidence must lie in (0, 1)")
        if self.max_trials < 1:
            raise InvalidParameter("max_trials must be >= 1")


def _pair(src, dst) -> tuple[np.ndarray, np.ndarray]:
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise DegenerateInput(f"correspondence lengths differ: {len(src)} vs {len(dst)}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise DegenerateInput("non-finite correspondence coordinates")
    return src, dst


def fit_rigid_lsq(src, dst) -> RigidTransform:
    """Closed-form least-squares rotation + translation (Procrustes without scale)."""
    src, dst = _pair(src, dst)
    if len(src) < 2:
        raise DegenerateInput("need at least 2 correspondences")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - cs, dst - cd
    if not np.any(np.abs(a) > 1e-12 * max(1.0, float(np.abs(src).max()))):
        raise DegenerateInput("source points are coincident")
    num = float(np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]))
    den = float(np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]))
    theta = math.atan2(num, den)
    c, s = math.cos(theta), math.sin(theta)
    tx = cd[0] - (cs[0] * c - cs[1] * s)
    ty = cd[1] - (cs[0] * s + cs[1] * c)
    return RigidTransform(theta, tx, ty)


def _required_trials(inlier_ratio: float, confidence: float, cap: int) -> int:
    if inlier_ratio >= 1.0:
        return 1
    good = inlier_ratio**2
    if good <= 0.0:
        return cap
    return min(cap, max(1, math.ceil(math.log(1.0 - confidence) / math.log(1.0 - good))))


def fit_rigid_msac(src, dst, cfg: MsacConfig = MsacConfig(), rng=None):
    """Robust rigid fit.  Returns ``(transform, inlier_mask)``.

    Hypotheses come from random 2-point samples and are scored with the
    truncated quadratic ``sum(min(r^2, thr^2))``; the winner's inliers are
    refit by least squares.  ``rng`` overrides the generator seeded from
    ``cfg.seed``.
    """
    src, dst = _pair(src, dst)
    n = len(src)
    if n < 2:
        raise EstimationFailure("MSAC needs at least 2 correspondences")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    thr2 = cfg.inlier_threshold**2

    best_cost = math.inf
    best_inliers = None
    needed = cfg.max_trials
    done = 0
    batch = 16
    while done < min(needed, cfg.max_trials):
        m = min(batch, cfg.max_trials - done)
        i = rng.integers(0, n, size=m)
        j = (i + rng.integers(1, n, size=m)) % n
        vs = src[j] - src[i]
        vd = dst[j] - dst[i]
        theta = np.arctan2(vs[:, 0] * vd[:, 1] - vs[:, 1] * vd[:, 0], (vs * vd).sum(axis=1))
        c, s = np.cos(theta), np.sin(theta)
        ms, md = (src[i] + src[j]) / 2.0, (dst[i] + dst[j]) / 2.0
        tx = md[:, 0] - (ms[:, 0] * c - ms[:, 1] * s)
        ty = md[:, 1] - (ms[:, 0] * s + ms[:, 1] * c)
        px = np.outer(c, src[:, 0]) - np.outer(s, src[:, 1]) + tx[:, None]
        py = np.outer(s, src[:, 0]) + np.outer(c, src[:, 1]) + ty[:, None]
        r2 = (px - dst[:, 0]) ** 2 + (py - dst[:, 1]) ** 2
        degenerate = np.hypot(vs[:, 0], vs[:, 1]) < 1e-9
        cost = np.minimum(r2, thr2).sum(axis=1)
        cost[degenerate] = math.inf
        k = int(np.argmin(cost))
        if cost[k] < best_cost:
            best_cost = float(cost[k])
            best_inliers = r2[k] < thr2
            needed = _required_trials(best_inliers.mean(), cfg.confidence, cfg.max_trials)
        done += m

    if best_inliers is None or best_inliers.sum() < 2:
        raise EstimationFailure("no hypothesis with at least 2 inliers")
    try:
        model = fit_rigid_lsq(src[best_inliers], dst[best_inliers])
    except DegenerateInput as exc:
        raise EstimationFailure(str(exc)) from exc
    return model, best_inliers


def transform_about_point(t: RigidTransform, a: float, b: float) -> np.ndarray:
    """``T*`` for rotation about ``(a, b)``: ``[[1,0,0],[0,1,0],[-a,-b,1]] T + [[0]*3,[0]*3,[a,b,0]]``."""
    shift = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-a, -b, 1.0]])
    back = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [a, b, 0.0]])
    return shift @ t.matrix() + back


def apply_matrix(m, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    homog = np.column_stack([pts, np.ones(len(pts))])
    return (homog @ np.asarray(m))[:, :2]


def extract_angle(t) -> float:
    """Rotation angle from a transform or a 3x3 matrix in the row-vector layout."""
    m = t.matrix() if isinstance(t, RigidTransform) else np.asarray(t, dtype=np.float64)
    return math.atan2(m[0, 1], m[0, 0])


def accumulate(increments) -> float:
    """Plain (unwrapped) sum of per-interval angles; warns on increments of 60 degrees or more."""
    total = 0.0
    for inc in increments:
        if abs(inc) >= INTERVAL_LIMIT:
            warnings.warn(
                f"increment {inc:.4f} rad reaches the 60 degree interval limit", IntervalViolation
            )
        total += inc
    return total

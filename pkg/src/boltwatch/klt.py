"""Pyramidal Lucas-Kanade point tracking with forward-backward rejection.

Per pyramid level each point's template window is sampled once and its 2x2
gradient matrix inverted once; each iteration only resamples the next frame
at the current displacement estimate.  The per-point loop is compiled with
numba.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .errors import InvalidParameter
from .imagecore import Pyramid

SINGULAR_EIG = 1e-6
MAX_FINAL_STEP = 1.0

TRACKED = "tracked"
OUT_OF_BOUNDS = "out_of_bounds"
SINGULAR = "singular"
NO_CONVERGENCE = "no_convergence"
FB_ERROR = "fb_error"
REASONS = (TRACKED, OUT_OF_BOUNDS, SINGULAR, NO_CONVERGENCE, FB_ERROR)
_CODE = {name: i for i, name in enumerate(REASONS)}


@dataclass(frozen=True)
class TrackerConfig:
    np: int = 3
    be: float = 6.0
    bs: int = 5
    ni: int = 30
    eps: float = 0.03

    def __post_init__(self):
        if self.np < 1:
            raise InvalidParameter(f"np must be >= 1, got {self.np}")
        if not self.be > 0:
            raise InvalidParameter(f"be must be positive, got {self.be}")
        if self.bs < 3 or self.bs % 2 == 0:
            raise InvalidParameter(f"bs must be odd and >= 3, got {self.bs}")
        if self.ni < 1:
            raise InvalidParameter(f"ni must be >= 1, got {self.ni}")
        if not self.eps > 0:
            raise InvalidParameter(f"eps must be positive, got {self.eps}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrackOutcome:
    status: str
    new_x: float = float("nan")
    new_y: float = float("nan")
    fb_error: float = float("nan")

    @property
    def tracked(self) -> bool:
        return self.status == TRACKED


def _window_offsets(bs: int) -> tuple[np.ndarray, np.ndarray]:
    half = bs // 2
    off = np.arange(-half, half + 1, dtype=np.float64)
    ox, oy = np.meshgrid(off, off)
    return ox.ravel(), oy.ravel()


@njit(cache=True)
def _bilinear(img, x, y):
    # same clamping as imagecore.bilinear_many
    h, w = img.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0 = min(int(np.floor(x)), w - 2) if w > 1 else 0
    y0 = min(int(np.floor(y)), h - 2) if h > 1 else 0
    fx = x - x0
    fy = y - y0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


@njit(cache=True)
def _grad_px(img, x, y):
    # np.gradient at one pixel: central differences, one-sided on the border
    h, w = img.shape
    if w == 1:
        gx = 0.0
    elif x == 0:
        gx = img[y, 1] - img[y, 0]
    elif x == w - 1:
        gx = img[y, w - 1] - img[y, w - 2]
    else:
        gx = (img[y, x + 1] - img[y, x - 1]) / 2.0
    if h == 1:
        gy = 0.0
    elif y == 0:
        gy = img[1, x] - img[0, x]
    elif y == h - 1:
        gy = img[h - 1, x] - img[h - 2, x]
    else:
        gy = (img[y + 1, x] - img[y - 1, x]) / 2.0
    return gx, gy


@njit(cache=True)
def _bilinear_grad(img, x, y):
    """Bilinear sample of the ``np.gradient`` field without building it."""
    h, w = img.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0 = min(int(np.floor(x)), w - 2) if w > 1 else 0
    y0 = min(int(np.floor(y)), h - 2) if h > 1 else 0
    fx = x - x0
    fy = y - y0
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    ax, ay = _grad_px(img, x0, y0)
    bx, by = _grad_px(img, x1, y0)
    cx, cy = _grad_px(img, x0, y1)
    dx, dy = _grad_px(img, x1, y1)
    gx = (ax * (1.0 - fx) + bx * fx) * (1.0 - fy) + (cx * (1.0 - fx) + dx * fx) * fy
    gy = (ay * (1.0 - fx) + by * fx) * (1.0 - fy) + (cy * (1.0 - fx) + dy * fx) * fy
    return gx, gy


@njit(cache=True)
def _lk_level(img_i, img_j, p, d, half, ni, eps, singular_eig, singular, step):
    """One pyramid level for every row of ``p``; updates ``d``, ``singular`` and ``step`` in place."""
    k = 2 * half + 1
    tmpl = np.empty(k * k)
    gx = np.empty(k * k)
    gy = np.empty(k * k)
    for n in range(p.shape[0]):
        px, py = p[n, 0], p[n, 1]
        sxx = syy = sxy = 0.0
        m = 0
        for oy in range(-half, half + 1):
            for ox in range(-half, half + 1):
                tmpl[m] = _bilinear(img_i, px + ox, py + oy)
                gx[m], gy[m] = _bilinear_grad(img_i, px + ox, py + oy)
                sxx += gx[m] * gx[m]
                syy += gy[m] * gy[m]
                sxy += gx[m] * gy[m]
                m += 1
        min_eig = (sxx + syy) / 2.0 - np.sqrt(((sxx - syy) / 2.0) ** 2 + sxy * sxy)
        if min_eig < singular_eig:
            singular[n] = True
            continue
        det = sxx * syy - sxy * sxy
        ixx, iyy, ixy = syy / det, sxx / det, -sxy / det
        dx, dy = d[n, 0], d[n, 1]
        last = 0.0
        for _ in range(ni):
            bx = by = 0.0
            m = 0
            for oy in range(-half, half + 1):
                for ox in range(-half, half + 1):
                    err = tmpl[m] - _bilinear(img_j, px + ox + dx, py + oy + dy)
                    bx += err * gx[m]
                    by += err * gy[m]
                    m += 1
            ux = ixx * bx + ixy * by
            uy = ixy * bx + iyy * by
            dx += ux
            dy += uy
            last = np.hypot(ux, uy)
            if last < eps:
                break
        d[n, 0], d[n, 1] = dx, dy
        step[n] = last


def _window_inside(pts: np.ndarray, half: int, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    x, y = pts[:, 0], pts[:, 1]
    return (x - half >= 0) & (y - half >= 0) & (x + half <= w - 1) & (y + half <= h - 1)


def lucas_kanade(
    prev: Pyramid, nxt: Pyramid, pts: np.ndarray, cfg: TrackerConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Coarse-to-fine translational LK for an ``(n, 2)`` array of points.

    Returns the landing points and an integer status code per point
    (indices into ``REASONS``).
    """
    if len(prev) != cfg.np or len(nxt) != cfg.np:
        raise InvalidParameter(
            f"pyramids have {len(prev)}/{len(nxt)} levels, tracker expects {cfg.np}"
        )
    if prev.shape != nxt.shape:
        raise InvalidParameter(f"frame sizes differ: {prev.shape} vs {nxt.shape}")
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    code = np.zeros(n, dtype=np.int8)
    d = np.zeros((n, 2))
    if n == 0:
        return pts.copy(), code

    half = cfg.bs // 2
    code[~_window_inside(pts, half, prev.shape)] = _CODE[OUT_OF_BOUNDS]
    last_step = np.zeros(n)

    for level in range(cfg.np - 1, -1, -1):
        alive = np.flatnonzero(code == 0)
        if alive.size == 0:
            break
        p = pts[alive] / float(2**level)
        dl = d[alive]
        singular = np.zeros(alive.size, dtype=np.bool_)
        step = np.zeros(alive.size)
        _lk_level(prev.levels[level], nxt.levels[level], p, dl, half, cfg.ni,
                  cfg.eps, SINGULAR_EIG, singular, step)
        code[alive[singular]] = _CODE[SINGULAR]
        d[alive] = dl
        if level > 0:
            d *= 2.0
        else:
            last_step[alive] = step

    out = pts + d
    alive = code == 0
    code[alive & (last_step > MAX_FINAL_STEP)] = _CODE[NO_CONVERGENCE]
    alive = code == 0
    code[alive & ~_window_inside(out, half, nxt.shape)] = _CODE[OUT_OF_BOUNDS]
    return out, code


def track_array(
    prev: Pyramid,
    nxt: Pyramid,
    pts: np.ndarray,
    cfg: TrackerConfig,
    bidirectional: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward track plus (optionally) the forward-backward check.

    Returns ``(landing points, fb_error, status codes)``.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    out, code = lucas_kanade(prev, nxt, pts, cfg)
    fb = np.full(len(pts), np.nan)
    if bidirectional:
        ok = np.flatnonzero(code == 0)
        if ok.size:
            back, back_code = lucas_kanade(nxt, prev, out[ok], cfg)
            err = np.hypot(back[:, 0] - pts[ok, 0], back[:, 1] - pts[ok, 1])
            fb[ok] = err
            bad = (back_code != 0) | ~(err <= cfg.be)
            code[ok[bad]] = _CODE[FB_ERROR]
    return out, fb, code


def _as_xy(points) -> np.ndarray:
    """FeaturePoints, (x, y) pairs or an array, as an ``(n, 2)`` float array."""
    if isinstance(points, np.ndarray):
        return points.reshape(-1, 2).astype(np.float64)
    return np.array([(p.x, p.y) if hasattr(p, "x") else tuple(p) for p in points],
                    dtype=np.float64).reshape(-1, 2)


def _outcomes(out: np.ndarray, fb: np.ndarray, code: np.ndarray) -> list[TrackOutcome]:
    result = []
    for (x, y), e, c in zip(out, fb, code):
        if c == 0:
            result.append(TrackOutcome(TRACKED, float(x), float(y), float(e)))
        else:
            result.append(TrackOutcome(REASONS[c], fb_error=float(e)))
    return result


def track_points(
    prev: Pyramid,
    nxt: Pyramid,
    points: Sequence,
    cfg: TrackerConfig,
    bidirectional: bool = True,
) -> list[TrackOutcome]:
    """Track ``points`` (FeaturePoints or an (n, 2) array) from ``prev`` to ``nxt``."""
    return _outcomes(*track_array(prev, nxt, _as_xy(points), cfg, bidirectional))


def forward_backward_check(
    prev: Pyramid, nxt: Pyramid, point, forward: TrackOutcome, cfg: TrackerConfig
) -> TrackOutcome:
    """Re-track ``forward``'s landing point back to ``prev`` and apply the BE threshold."""
    if not forward.tracked:
        return forward
    origin = _as_xy([point])
    back, code = lucas_kanade(nxt, prev, np.array([[forward.new_x, forward.new_y]]), cfg)
    err = float(np.hypot(*(back[0] - origin[0])))
    if code[0] != 0 or not err <= cfg.be:
        return TrackOutcome(FB_ERROR, fb_error=err)
    return TrackOutcome(TRACKED, forward.new_x, forward.new_y, err)

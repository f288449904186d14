"""Edge maps and the rho-theta Hough line transform (the edge-based baseline)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidParameter
from .imagecore import as_gray, gaussian_blur

CANNY_SIGMA = 1.4
LOG_SIGMA = 2.0
REFINE_BAND = 2.0
DEFAULT_THRESHOLDS = {"canny": (0.1, 0.8), "prewitt": 0.05, "log": 0.004}


@dataclass(frozen=True)
class Line:
    rho: float
    theta_line: float  # degrees in [0, 180)
    votes: int

    def __post_init__(self):
        if self.votes < 1:
            raise InvalidParameter("a line needs at least one vote")


def _check(t: float) -> float:
    t = float(t)
    if not 0.0 < t < 1.0:
        raise InvalidParameter(f"threshold {t} must lie in (0, 1)")
    return t


def _normalized(mag: np.ndarray) -> np.ndarray | None:
    peak = float(mag.max()) if mag.size else 0.0
    if peak <= 1e-12:
        return None
    return mag / peak


def _canny(img: np.ndarray, low: float, high: float) -> np.ndarray:
    smooth = gaussian_blur(img, CANNY_SIGMA)
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    mag = _normalized(np.hypot(gx, gy))
    if mag is None:
        return np.zeros(img.shape, dtype=bool)
    # quantize the gradient direction to 0/45/90/135 degrees
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (np.round(angle / 45.0).astype(int)) % 4
    step = np.array([(1, 0), (1, 1), (0, 1), (-1, 1)])  # (dx, dy) along the gradient
    pad = np.pad(mag, 1)
    h, w = mag.shape
    yy, xx = np.mgrid[0:h, 0:w]
    dx, dy = step[sector, 0], step[sector, 1]
    ahead = pad[yy + 1 + dy, xx + 1 + dx]
    behind = pad[yy + 1 - dy, xx + 1 - dx]
    # ties on a symmetric ridge go to the pixel on the negative side
    thin = (mag >= ahead) & (mag > behind) & (mag > 0)
    strong = thin & (mag >= high)
    weak = thin & (mag >= low)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3)))
    if n == 0:
        return np.zeros(img.shape, dtype=bool)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


def _prewitt(img: np.ndarray, thr: float) -> np.ndarray:
    gx = ndimage.prewitt(img, axis=1, mode="nearest")
    gy = ndimage.prewitt(img, axis=0, mode="nearest")
    mag = _normalized(np.hypot(gx, gy))
    if mag is None:
        return np.zeros(img.shape, dtype=bool)
    return mag >= thr


def _log(img: np.ndarray, thr: float) -> np.ndarray:
    resp = ndimage.gaussian_laplace(img, LOG_SIGMA, mode="nearest")
    norm = _normalized(np.abs(resp))
    edges = np.zeros(img.shape, dtype=bool)
    if norm is None:
        return edges
    r = resp / float(np.abs(resp).max())
    for a, b in ((r[:, :-1], r[:, 1:]), (r[:-1, :], r[1:, :])):
        cross = (np.sign(a) * np.sign(b) < 0) & (np.abs(a - b) > thr)
        # mark whichever side of the crossing is closer to zero
        first = cross & (np.abs(a) <= np.abs(b))
        second = cross & ~first
        if a.shape[1] != r.shape[1]:
            edges[:, :-1] |= first
            edges[:, 1:] |= second
        else:
            edges[:-1, :] |= first
            edges[1:, :] |= second
    return edges


def edge_map(img, method: str = "canny", thresholds=None) -> np.ndarray:
    """Binary edge raster; thresholds are fractions of the image's maximal response."""
    img = as_gray(img)
    if method not in DEFAULT_THRESHOLDS:
        raise InvalidParameter(f"unknown edge method {method!r}")
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS[method]
    if method == "canny":
        try:
            low, high = (_check(t) for t in thresholds)
        except TypeError:
            raise InvalidParameter("canny needs a (low, high) pair") from None
        if not low < high:
            raise InvalidParameter("canny low threshold must be below high")
        return _canny(img, low, high)
    if np.ndim(thresholds) != 0:
        raise InvalidParameter(f"{method} takes a single threshold")
    thr = _check(thresholds)
    return _prewitt(img, thr) if method == "prewitt" else _log(img, thr)


def hough_accumulator(edges) -> tuple[np.ndarray, np.ndarray, int]:
    """Votes over (rho, theta) with 1 px and 1 degree bins; returns ``(acc, thetas_deg, rho_offset)``.

    Each edge pixel casts one vote per theta, into the rho bin nearest its exact rho.
    """
    edges = np.asarray(edges, dtype=bool)
    h, w = edges.shape
    diag = int(math.ceil(math.hypot(h, w)))
    thetas = np.arange(180)
    rad = np.deg2rad(thetas)
    ys, xs = np.nonzero(edges)
    acc = np.zeros((2 * diag + 1, 180), dtype=np.int64)
    if xs.size:
        rho = np.outer(xs, np.cos(rad)) + np.outer(ys, np.sin(rad)) + diag
        flat = (np.rint(rho).astype(np.int64) * 180 + thetas).ravel()
        acc += np.bincount(flat, minlength=acc.size).reshape(acc.shape)
    return acc, thetas, diag


def hough_lines(edges, n_peaks: int = 1) -> list[Line]:
    """The ``n_peaks`` strongest cells after 3x3 non-maximum suppression, by descending votes."""
    if n_peaks < 1:
        raise InvalidParameter("n_peaks must be >= 1")
    acc, thetas, diag = hough_accumulator(edges)
    ys, xs = np.nonzero(np.asarray(edges, dtype=bool))
    xs, ys = xs.astype(np.float64), ys.astype(np.float64)
    if not acc.any():
        return []
    local = (acc == ndimage.maximum_filter(acc, size=3, mode="constant")) & (acc >= 1)
    r_idx, t_idx = np.nonzero(local)
    votes = acc[r_idx, t_idx]
    order = np.lexsort((t_idx, r_idx, -votes))
    chosen: list[tuple[int, int]] = []
    lines = []
    for k in order:
        r, t = int(r_idx[k]), int(t_idx[k])
        # plateaus leave adjacent equal maxima; keep the first of each
        if any(abs(r - cr) <= 1 and abs(t - ct) <= 1 for cr, ct in chosen):
            continue
        chosen.append((r, t))
        rho, theta = _refine(xs, ys, float(r - diag), float(thetas[t]))
        lines.append(Line(rho, theta, int(votes[k])))
        if len(lines) == n_peaks:
            break
    return lines


def _refine(xs: np.ndarray, ys: np.ndarray, rho: float, theta_deg: float) -> tuple[float, float]:
    """Total-least-squares line through the edge pixels that voted near a peak cell.

    A 1-degree bin leaves rho off by ``u * dtheta`` for pixels a distance ``u``
    along the line from the foot of the normal, which exceeds a pixel for
    segments far from the origin; the fit removes that quantization.
    """
    t = math.radians(theta_deg)
    near = np.abs(xs * math.cos(t) + ys * math.sin(t) - rho) <= REFINE_BAND
    if near.sum() < 3:
        return rho, theta_deg
    px, py = xs[near], ys[near]
    mx, my = px.mean(), py.mean()
    cov = np.cov(np.vstack([px - mx, py - my]))
    normal = np.linalg.eigh(cov)[1][:, 0]
    new_t = math.atan2(normal[1], normal[0])
    new_rho = mx * math.cos(new_t) + my * math.sin(new_t)
    deg = math.degrees(new_t)
    # express with theta in [0, 180), flipping the sign of rho when the normal flips
    while deg < 0.0:
        deg += 180.0
        new_rho = -new_rho
    while deg >= 180.0:
        deg -= 180.0
        new_rho = -new_rho
    if abs(deg - theta_deg) > 3.0 and abs(abs(deg - theta_deg) - 180.0) > 3.0:
        return rho, theta_deg
    return float(new_rho), float(deg)


def render_line(shape: tuple[int, int], rho: float, theta_deg: float) -> np.ndarray:
    """Rasterize the infinite line ``x cos t + y sin t = rho`` as a 1-px-wide binary mask."""
    h, w = shape
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    mask = np.zeros(shape, dtype=bool)
    if abs(s) >= abs(c):
        xs = np.arange(w)
        ys = np.rint((rho - xs * c) / s).astype(int)
        ok = (ys >= 0) & (ys < h)
        mask[ys[ok], xs[ok]] = True
    else:
        ys = np.arange(h)
        xs = np.rint((rho - ys * s) / c).astype(int)
        ok = (xs >= 0) & (xs < w)
        mask[ys[ok], xs[ok]] = True
    return mask

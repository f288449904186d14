"""Shi-Tomasi (minimum eigenvalue) corners restricted to regions of interest."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter
from .imagecore import as_gray, gaussian_kernel, gradient, separable_filter

DEFAULT_MIN_QUALITY = 0.2
DEFAULT_FILTER_DIM = 5
DEFAULT_MAX_POINTS = 200


@dataclass(frozen=True)
class Roi:
    x: int
    y: int
    w: int
    h: int
    confidence: float = 1.0

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + (self.w - 1) / 2.0, self.y + (self.h - 1) / 2.0)

    def within(self, width: int, height: int) -> bool:
        return (
            self.w >= 8
            and self.h >= 8
            and self.x >= 0
            and self.y >= 0
            and self.x + self.w <= width
            and self.y + self.h <= height
            and 0.0 <= self.confidence <= 1.0
        )

    def iou(self, other: "Roi") -> float:
        ix = max(0, min(self.x + self.w, other.x + other.w) - max(self.x, other.x))
        iy = max(0, min(self.y + self.h, other.y + other.h) - max(self.y, other.y))
        inter = ix * iy
        union = self.w * self.h + other.w * other.h - inter
        return inter / union if union > 0 else 0.0

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}


@dataclass(frozen=True)
class FeaturePoint:
    x: float
    y: float
    quality: float = 0.0


def min_eig_response(img, filter_dim: int = DEFAULT_FILTER_DIM) -> np.ndarray:
    """Smaller eigenvalue of the Gaussian-weighted structure tensor, per pixel."""
    if filter_dim < 3 or filter_dim % 2 == 0:
        raise InvalidParameter(f"filter_dim must be odd and >= 3, got {filter_dim}")
    gx, gy = gradient(as_gray(img))
    kernel = gaussian_kernel((filter_dim - 1) / 4.0, radius=(filter_dim - 1) // 2)
    sxx = separable_filter(gx * gx, kernel)
    syy = separable_filter(gy * gy, kernel)
    sxy = separable_filter(gx * gy, kernel)
    half_trace = (sxx + syy) / 2.0
    disc = np.sqrt(((sxx - syy) / 2.0) ** 2 + sxy**2)
    return np.maximum(half_trace - disc, 0.0)


def _local_maxima(resp: np.ndarray) -> np.ndarray:
    """Strict 3x3 maxima; plateaus are broken in favour of the first pixel in raster order."""
    h, w = resp.shape
    padded = np.pad(resp, 1, mode="constant", constant_values=-np.inf)
    center = padded[1:-1, 1:-1]
    keep = np.ones(resp.shape, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            if (dy, dx) < (0, 0):
                keep &= center > nb
            else:
                keep &= center >= nb
    return keep


# least-squares fit of a + bx + cy + dx^2 + exy + fy^2 over the 3x3 neighbourhood
_OFFS = np.array([(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)], dtype=np.float64)
_DESIGN = np.column_stack(
    [np.ones(9), _OFFS[:, 0], _OFFS[:, 1], _OFFS[:, 0] ** 2, _OFFS[:, 0] * _OFFS[:, 1], _OFFS[:, 1] ** 2]
)
_FIT = np.linalg.pinv(_DESIGN)


def _subpixel_offsets(patches: np.ndarray) -> np.ndarray:
    coef = patches @ _FIT.T
    b, c, d, e, f = coef[:, 1], coef[:, 2], coef[:, 3], coef[:, 4], coef[:, 5]
    det = 4.0 * d * f - e * e
    ok = (det > 0) & (d < 0)
    safe = np.where(ok, det, 1.0)
    ox = np.where(ok, (-2.0 * f * b + e * c) / safe, 0.0)
    oy = np.where(ok, (-2.0 * d * c + e * b) / safe, 0.0)
    return np.clip(np.column_stack([ox, oy]), -0.5, 0.5)


def detect_corners(
    img,
    roi: Roi,
    min_quality: float = DEFAULT_MIN_QUALITY,
    filter_dim: int = DEFAULT_FILTER_DIM,
    max_points: int = DEFAULT_MAX_POINTS,
) -> list[FeaturePoint]:
    img = as_gray(img)
    height, width = img.shape
    if not (0.0 < min_quality < 1.0):
        raise InvalidParameter(f"min_quality must lie in (0, 1), got {min_quality}")
    if not roi.within(width, height):
        raise InvalidParameter(f"{roi} does not lie within the {width}x{height} frame")

    # response on a padded crop so ROI-border pixels see real neighbours
    margin = (filter_dim - 1) // 2 + 3
    x0, y0 = max(roi.x - margin, 0), max(roi.y - margin, 0)
    x1, y1 = min(roi.x + roi.w + margin, width), min(roi.y + roi.h + margin, height)
    resp = min_eig_response(img[y0:y1, x0:x1], filter_dim)
    inner = resp[roi.y - y0 : roi.y - y0 + roi.h, roi.x - x0 : roi.x - x0 + roi.w]
    peak = float(inner.max())
    if peak <= 0.0:
        return []

    keep = _local_maxima(inner) & (inner >= min_quality * peak)
    ys, xs = np.nonzero(keep)
    if xs.size == 0:
        return []
    quality = inner[ys, xs]
    order = np.lexsort((xs, ys, -quality))[:max_points]
    ys, xs, quality = ys[order], xs[order], quality[order]

    cy, cx = ys + roi.y - y0, xs + roi.x - x0
    padded = np.pad(resp, 1, mode="edge")
    patches = np.stack(
        [padded[cy + 1 + dy, cx + 1 + dx] for dy in (-1, 0, 1) for dx in (-1, 0, 1)], axis=1
    )
    offs = _subpixel_offsets(patches)
    px = np.clip(xs + roi.x + offs[:, 0], roi.x, roi.x + roi.w - 1)
    py = np.clip(ys + roi.y + offs[:, 1], roi.y, roi.y + roi.h - 1)
    return [FeaturePoint(float(x), float(y), float(q)) for x, y, q in zip(px, py, quality)]

"""Image containers and pixel kernels.

Gray images are ``float64`` arrays of shape ``(height, width)`` with values in
``[0, 1]``; RGB images are ``uint8`` arrays of shape ``(height, width, 3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from PIL import Image
from scipy import ndimage

from .errors import InvalidParameter, OutOfBounds

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
MIN_PYRAMID_SIDE = 8


def as_rgb(data) -> np.ndarray:
    img = np.asarray(data)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidParameter(f"expected an (h, w, 3) raster, got shape {img.shape}")
    return img.astype(np.uint8, copy=False)


def as_gray(data) -> np.ndarray:
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidParameter(f"expected an (h, w) raster, got shape {img.shape}")
    return img


def to_grayscale(img) -> np.ndarray:
    rgb = as_rgb(img).astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    return (r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]) / 255.0


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    """Unit-sum sampled Gaussian; radius defaults to ``ceil(3 * sigma)``."""
    if not sigma > 0:
        raise InvalidParameter(f"sigma must be positive, got {sigma}")
    if radius is None:
        radius = int(math.ceil(3.0 * sigma))
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (taps / sigma) ** 2)
    return k / k.sum()


def separable_filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(out, kernel, axis=1, mode="nearest")


def gaussian_blur(img, sigma: float) -> np.ndarray:
    return separable_filter(as_gray(img), gaussian_kernel(sigma))


def gradient(img) -> tuple[np.ndarray, np.ndarray]:
    """Central differences in the interior, one-sided differences on the border."""
    img = as_gray(img)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise InvalidParameter(f"gradient needs at least 3x3 pixels, got {img.shape}")
    gy, gx = np.gradient(img)
    return gx, gy


def pyramid_sizes(height: int, width: int, levels: int) -> list[tuple[int, int]]:
    sizes = [(height, width)]
    for _ in range(levels - 1):
        h, w = sizes[-1]
        sizes.append((h // 2, w // 2))
    return sizes


@dataclass
class Pyramid:
    """Coarse-to-fine image stack; ``levels[0]`` is full resolution.

    Gradients are computed on first use and cached per level.
    """

    levels: list[np.ndarray]
    _grads: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.levels[0].shape

    def gradients(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        if level not in self._grads:
            self._grads[level] = gradient(self.levels[level])
        return self._grads[level]


def build_pyramid(img, np_levels: int) -> Pyramid:
    img = np.ascontiguousarray(as_gray(img))
    if np_levels < 1:
        raise InvalidParameter(f"pyramid needs at least one level, got {np_levels}")
    h, w = pyramid_sizes(*img.shape, np_levels)[-1]
    if np_levels > 1 and min(h, w) < MIN_PYRAMID_SIDE:
        raise InvalidParameter(
            f"{np_levels} levels would shrink {img.shape} below {MIN_PYRAMID_SIDE}x{MIN_PYRAMID_SIDE}"
        )
    kernel = gaussian_kernel(1.0)
    levels = [img]
    for _ in range(np_levels - 1):
        prev = levels[-1]
        h2, w2 = prev.shape[0] // 2, prev.shape[1] // 2
        levels.append(_reduce(prev, kernel, h2, w2))
    return Pyramid(levels)


@njit(cache=True)
def _reduce(img, kernel, h2, w2):
    """Gaussian blur (edge-replicated) sampled at even rows and columns only."""
    h, w = img.shape
    r = kernel.size // 2
    rows = np.empty((h2, w))
    for i in range(h2):
        for x in range(w):
            acc = 0.0
            for t in range(kernel.size):
                y = min(max(2 * i + t - r, 0), h - 1)
                acc += kernel[t] * img[y, x]
            rows[i, x] = acc
    out = np.empty((h2, w2))
    for i in range(h2):
        for j in range(w2):
            acc = 0.0
            for t in range(kernel.size):
                x = min(max(2 * j + t - r, 0), w - 1)
                acc += kernel[t] * rows[i, x]
            out[i, j] = acc
    return out


def sample_bilinear(img, x: float, y: float) -> float:
    img = as_gray(img)
    h, w = img.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise OutOfBounds(f"({x}, {y}) outside {w}x{h} image")
    return float(bilinear_many(img, np.array([x]), np.array([y]))[0])


def bilinear_many(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized bilinear sampling; coordinates are clamped to the image."""
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 2) if w > 1 else np.zeros(xs.shape, np.intp)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 2) if h > 1 else np.zeros(ys.shape, np.intp)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def rgb_to_hsl(img) -> np.ndarray:
    """Return an ``(h, w, 3)`` float raster of (hue degrees, saturation, lightness)."""
    rgb = as_rgb(img).astype(np.float64) / 255.0
    cmax = rgb.max(axis=-1)
    cmin = rgb.min(axis=-1)
    delta = cmax - cmin
    light = (cmax + cmin) / 2.0
    denom = 1.0 - np.abs(2.0 * light - 1.0)
    sat = np.where(delta > 0, delta / np.where(denom > 0, denom, 1.0), 0.0)

    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    safe = np.where(delta > 0, delta, 1.0)
    hue = np.zeros_like(cmax)
    hue = np.where(cmax == b, 60.0 * ((r - g) / safe + 4.0), hue)
    hue = np.where(cmax == g, 60.0 * ((b - r) / safe + 2.0), hue)
    hue = np.where(cmax == r, 60.0 * np.mod((g - b) / safe, 6.0), hue)
    hue = np.where(delta > 0, hue, 0.0)
    return np.stack([hue, np.clip(sat, 0.0, 1.0), light], axis=-1)


def hsl_to_rgb(hsl) -> np.ndarray:
    hsl = np.asarray(hsl, dtype=np.float64)
    hue, sat, light = hsl[..., 0], hsl[..., 1], hsl[..., 2]
    chroma = (1.0 - np.abs(2.0 * light - 1.0)) * sat
    hp = np.mod(hue, 360.0) / 60.0
    x = chroma * (1.0 - np.abs(np.mod(hp, 2.0) - 1.0))
    sector = np.floor(hp).astype(int) % 6
    zeros = np.zeros_like(chroma)
    table = [
        (chroma, x, zeros),
        (x, chroma, zeros),
        (zeros, chroma, x),
        (zeros, x, chroma),
        (x, zeros, chroma),
        (chroma, zeros, x),
    ]
    r = np.choose(sector, [t[0] for t in table])
    g = np.choose(sector, [t[1] for t in table])
    b = np.choose(sector, [t[2] for t in table])
    m = light - chroma / 2.0
    rgb = np.stack([r + m, g + m, b + m], axis=-1)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def unsharp_sharpen(img, sigma: float, amount: float) -> np.ndarray:
    if amount < 0:
        raise InvalidParameter(f"amount must be non-negative, got {amount}")
    img = as_gray(img)
    blurred = gaussian_blur(img, sigma)
    return np.clip(img + amount * (img - blurred), 0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def read_image(path, gray: bool = True) -> np.ndarray:
    """Read a PGM/PNG raster; grayscale images come back in ``[0, 1]``."""
    with Image.open(path) as im:
        if gray:
            if im.mode == "L":
                return np.asarray(im, dtype=np.float64) / 255.0
            return to_grayscale(np.asarray(im.convert("RGB")))
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_image(path, img) -> None:
    """Write a gray ``[0, 1]`` raster or an RGB ``uint8`` raster; format follows the suffix."""
    path = Path(path)
    arr = np.asarray(img)
    if arr.ndim == 2:
        out = Image.fromarray(arr if arr.dtype == np.uint8 else to_uint8(arr), mode="L")
    else:
        out = Image.fromarray(as_rgb(arr), mode="RGB")
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".ppm") else None
    out.save(path, format=fmt)

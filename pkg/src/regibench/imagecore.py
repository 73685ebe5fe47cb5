"""Image primitives: grayscale conversion, bilinear sampling, blurring, pyramids, PNG I/O.

Images are plain ``numpy`` float64 arrays, ``(H, W)`` for grayscale and
``(H, W, 3)`` for RGB, with intensities on the 0..255 scale. Values stay real
valued through the whole pipeline and are only quantized when written to PNG.
"""
from __future__ import annotations

import math
from functools import lru_cache
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image as PILImage

from .errors import InvalidChannelError, InvalidParameterError

PathLike = Union[str, Path]


def as_image(img) -> np.ndarray:
    """Validate and convert ``img`` to a float64 image array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise InvalidChannelError(f"expected (H, W) or (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidParameterError("image must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("image contains non-finite values")
    return arr


def to_grayscale(img) -> np.ndarray:
    """Luma conversion ``0.299 R + 0.587 G + 0.114 B`` without rounding."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidChannelError(f"to_grayscale needs a 3-channel image, got shape {arr.shape}")
    return arr[:, :, 0] * 0.299 + arr[:, :, 1] * 0.587 + arr[:, :, 2] * 0.114


def ensure_gray(img) -> np.ndarray:
    arr = as_image(img)
    return to_grayscale(arr) if arr.ndim == 3 else arr


def _bilinear_setup(n: int, coord: np.ndarray):
    c = np.clip(coord, 0.0, n - 1)
    i0 = np.floor(c).astype(np.intp)
    if n > 1:
        i0 = np.minimum(i0, n - 2)
    i1 = np.minimum(i0 + 1, n - 1)
    return i0, i1, c - i0


def sample_bilinear(img, x, y, fill: str = "clamp"):
    """Sample ``img`` at real pixel coordinates ``(x, y)`` (x = column, y = row).

    ``x`` and ``y`` may be scalars or arrays of matching shape. With
    ``fill="clamp"`` out-of-range coordinates take the nearest border value;
    with ``fill="zero"`` they yield 0.
    """
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    x0, x1, fx = _bilinear_setup(w, xs)
    y0, y1, fy = _bilinear_setup(h, ys)
    if arr.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = arr[y0, x0] * (1.0 - fx) + arr[y0, x1] * fx
    bottom = arr[y1, x0] * (1.0 - fx) + arr[y1, x1] * fx
    out = top * (1.0 - fy) + bottom * fy
    if fill == "zero":
        outside = (xs < 0) | (xs > w - 1) | (ys < 0) | (ys > h - 1)
        if arr.ndim == 3:
            outside = outside[..., None]
        out = np.where(outside, 0.0, out)
    elif fill != "clamp":
        raise InvalidParameterError(f"unknown fill policy {fill!r}")
    if out.ndim == 0:
        return float(out)
    return out


@lru_cache(maxsize=64)
def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian of radius ``ceil(3 sigma)``."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    radius = max(1, math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    k.setflags(write=False)
    return k


def _blur_axis(a: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    # half-sample symmetric extension keeps the blur operator symmetric (mass preserving)
    p = np.pad(a, pad, mode="symmetric")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for k, wk in enumerate(kernel):
        out += wk * np.take(p, np.arange(k, k + n), axis=axis)
    return out


def gaussian_blur(plane, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a 2D plane (or each channel of an RGB image)."""
    kernel = gaussian_kernel1d(float(sigma))
    a = np.asarray(plane, dtype=np.float64)
    if a.ndim not in (2, 3):
        raise InvalidParameterError(f"expected a 2D plane, got shape {a.shape}")
    return _blur_axis(_blur_axis(a, kernel, 0), kernel, 1)


@lru_cache(maxsize=32)
def blur_matrix(n: int, sigma: float) -> np.ndarray:
    """Dense ``n x n`` matrix ``B`` with ``gaussian_blur(P) == B_h @ P @ B_w.T``."""
    m = _blur_axis(np.eye(n), gaussian_kernel1d(float(sigma)), 0)
    m.setflags(write=False)
    return m


def downsample2(img: np.ndarray) -> np.ndarray:
    """Average non-overlapping 2x2 blocks (odd trailing row/column dropped)."""
    h, w = img.shape[0] // 2, img.shape[1] // 2
    a = img[: 2 * h, : 2 * w]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def build_pyramid(img, levels: int) -> list[np.ndarray]:
    """Return ``[img, img/2, img/4, ...]``; each level is blurred (sigma 1) then 2x2-averaged."""
    arr = as_image(img)
    if levels < 1:
        raise InvalidParameterError("levels must be >= 1")
    need = 2 ** (levels - 1)
    if arr.shape[0] < need or arr.shape[1] < need:
        raise InvalidParameterError(
            f"image {arr.shape[1]}x{arr.shape[0]} too small for {levels} pyramid levels"
        )
    pyramid = [arr]
    for _ in range(1, levels):
        pyramid.append(downsample2(gaussian_blur(pyramid[-1], 1.0)))
    return pyramid


def read_image(path: PathLike) -> np.ndarray:
    """Load an image file as float64; grayscale stays 2D, everything else becomes RGB."""
    with PILImage.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64)
        if im.mode in ("I", "I;16", "F"):
            return np.asarray(im.convert("F"), dtype=np.float64)
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def quantize(img) -> np.ndarray:
    """Round and clip to the 8-bit range (still float64)."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255)


def write_png(path: PathLike, img) -> None:
    arr = quantize(as_image(img)).astype(np.uint8)
    PILImage.fromarray(arr).save(path, format="PNG")

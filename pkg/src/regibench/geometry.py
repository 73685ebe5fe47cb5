"""Affine transforms, dense displacement fields and spatial-transformer warping.

Conventions: column vectors, pixel (0, 0) at the top-left, ``x`` is the column
index and ``y`` the row index. A displacement field stores, for every output
pixel ``p``, the offset to the source location it pulls from, so
``warp(img, field)(p) == img(p + field(p))``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import InvalidParameterError, SingularTransformError
from .imagecore import as_image, sample_bilinear

AFFINE_KINDS = ("translation", "shearing", "scaling", "rotation")

_PARAM_NAMES = {
    "translation": ("tx", "ty"),
    "shearing": ("shx", "shy"),
    "scaling": ("sx", "sy"),
    "rotation": ("q",),
}

DF_MAGIC = b"DF01"


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """3x3 homogeneous matrix mapping ``[x, y, 1]`` to ``[x', y', 1]``."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise InvalidParameterError(f"affine matrix must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidParameterError("affine matrix has non-finite entries")
        if not np.array_equal(m[2], [0.0, 0.0, 1.0]):
            raise InvalidParameterError(f"affine bottom row must be [0, 0, 1], got {m[2]}")
        if np.linalg.det(m[:2, :2]) == 0.0:
            raise SingularTransformError("affine linear block is singular")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(3))

    def apply(self, x, y):
        """Map point coordinates (scalars or arrays)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = self.m
        return m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2]

    def inverse(self) -> "AffineTransform":
        return invert_affine(self)

    def __matmul__(self, other: "AffineTransform") -> "AffineTransform":
        return compose_affine(self, other)

    def allclose(self, other: "AffineTransform", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.m, other.m, rtol=0.0, atol=atol))

    def __repr__(self):
        rows = ", ".join(np.array2string(r, precision=6, separator=", ") for r in self.m[:2])
        return f"AffineTransform([{rows}])"


def _renormalize(m: np.ndarray) -> AffineTransform:
    m = np.array(m, dtype=np.float64)
    m[2] = (0.0, 0.0, 1.0)
    return AffineTransform(m)


def invert_affine(t: AffineTransform) -> AffineTransform:
    a = t.m[:2, :2]
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if det == 0.0 or not math.isfinite(det):
        raise SingularTransformError("cannot invert a singular transform")
    return _renormalize(np.linalg.inv(t.m))


def compose_affine(a: AffineTransform, b: AffineTransform) -> AffineTransform:
    """Transform applying ``b`` first, then ``a``."""
    return _renormalize(a.m @ b.m)


def _params(kind: str, params) -> tuple[float, ...]:
    names = _PARAM_NAMES[kind]
    if isinstance(params, Mapping):
        try:
            vals = tuple(float(params[n]) for n in names)
        except KeyError as exc:
            raise InvalidParameterError(f"{kind} needs parameters {names}") from exc
    else:
        vals = tuple(float(v) for v in np.atleast_1d(np.asarray(params, dtype=np.float64)))
        if len(vals) != len(names):
            raise InvalidParameterError(f"{kind} needs {len(names)} parameters, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise InvalidParameterError(f"non-finite {kind} parameters {vals}")
    return vals


def make_affine(kind: str, params, center: Sequence[float] = (0.0, 0.0)) -> AffineTransform:
    """Build one of the generator's transform families.

    The textbook matrices are written for row vectors, so they appear
    transposed here. Everything except translation acts about ``center``;
    rotation angles are in degrees.
    """
    if kind not in _PARAM_NAMES:
        raise InvalidParameterError(f"unknown transform kind {kind!r}")
    p = _params(kind, params)
    m = np.eye(3)
    if kind == "translation":
        m[0, 2], m[1, 2] = p
        return AffineTransform(m)
    if kind == "shearing":
        shx, shy = p
        m[0, 1], m[1, 0] = shy, shx
    elif kind == "scaling":
        sx, sy = p
        if sx <= 0 or sy <= 0:
            raise InvalidParameterError(f"scale factors must be > 0, got {p}")
        m[0, 0], m[1, 1] = sx, sy
    else:
        q = math.radians(p[0])
        c, s = math.cos(q), math.sin(q)
        m[:2, :2] = [[c, -s], [s, c]]
    cx, cy = float(center[0]), float(center[1])
    to_center = np.array([[1.0, 0.0, cx], [0.0, 1.0, cy], [0.0, 0.0, 1.0]])
    from_center = np.array([[1.0, 0.0, -cx], [0.0, 1.0, -cy], [0.0, 0.0, 1.0]])
    return _renormalize(to_center @ m @ from_center)


def image_center(width: int, height: int) -> tuple[float, float]:
    return (width - 1) / 2.0, (height - 1) / 2.0


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-pixel shift planes ``dx``, ``dy`` of shape ``(height, width)``."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = np.array(self.dx, dtype=np.float64)
        dy = np.array(self.dy, dtype=np.float64)
        if dx.ndim != 2 or dx.shape != dy.shape:
            raise InvalidParameterError(f"field planes must be equal 2D shapes, got {dx.shape}, {dy.shape}")
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise InvalidParameterError("field contains non-finite values")
        dx.setflags(write=False)
        dy.setflags(write=False)
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.dx.shape

    @classmethod
    def zeros(cls, width: int, height: int) -> "DisplacementField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def constant(cls, width: int, height: int, dx: float, dy: float) -> "DisplacementField":
        return cls(np.full((height, width), float(dx)), np.full((height, width), float(dy)))

    def stacked(self) -> np.ndarray:
        """``(H, W, 2)`` array with channels (dx, dy)."""
        return np.stack([self.dx, self.dy], axis=-1)

    def as_float32(self) -> "DisplacementField":
        """Copy rounded to float32 precision, i.e. exactly what DF01 stores."""
        return DisplacementField(self.dx.astype(np.float32), self.dy.astype(np.float32))

    def scaled(self, factor: float) -> "DisplacementField":
        return DisplacementField(self.dx * factor, self.dy * factor)

    def equals(self, other: "DisplacementField") -> bool:
        return np.array_equal(self.dx, other.dx) and np.array_equal(self.dy, other.dy)


def affine_to_field(t: AffineTransform, width: int, height: int) -> DisplacementField:
    """Pixel shift ``T p - p`` for every integer pixel ``p``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xp, yp = t.apply(xs, ys)
    return DisplacementField(xp - xs, yp - ys)


def source_coords(field: DisplacementField) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0 : field.height, 0 : field.width].astype(np.float64)
    return xs + field.dx, ys + field.dy


def warp(img, field: DisplacementField, fill: str = "zero") -> np.ndarray:
    """Backward-warp ``img``: ``out(p) = img(p + field(p))`` with bilinear sampling."""
    arr = as_image(img)
    if arr.shape[:2] != field.shape:
        raise InvalidParameterError(
            f"field {field.width}x{field.height} does not match image {arr.shape[1]}x{arr.shape[0]}"
        )
    sx, sy = source_coords(field)
    return sample_bilinear(arr, sx, sy, fill=fill)


@lru_cache(maxsize=64)
def interp_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """``(n_dst, n_src)`` corner-aligned linear interpolation weights."""
    if n_src < 2:
        raise InvalidParameterError("need at least 2 source samples to interpolate")
    if n_dst == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_dst, dtype=np.float64) * (n_src - 1) / (n_dst - 1)
    i0 = np.minimum(np.floor(pos).astype(np.intp), n_src - 2)
    f = pos - i0
    a = np.zeros((n_dst, n_src))
    rows = np.arange(n_dst)
    a[rows, i0] += 1.0 - f
    a[rows, i0 + 1] += f
    a.setflags(write=False)
    return a


def upsample_plane(plane: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    h, w = plane.shape
    return interp_matrix(h, target_h) @ plane @ interp_matrix(w, target_w).T


def upsample_field(coarse: DisplacementField, target_w: int, target_h: int) -> DisplacementField:
    """Corner-aligned bilinear resampling of both planes onto a ``target_w x target_h`` grid."""
    if coarse.width < 2 or coarse.height < 2:
        raise InvalidParameterError("coarse field must be at least 2x2")
    if target_w < 1 or target_h < 1:
        raise InvalidParameterError("target size must be positive")
    return DisplacementField(
        upsample_plane(coarse.dx, target_w, target_h),
        upsample_plane(coarse.dy, target_w, target_h),
    )


def write_field(path: Union[str, Path], field: DisplacementField) -> None:
    """Write DF01: magic, u32 width, u32 height, then row-major (dx, dy) float32 pairs, all little-endian."""
    body = field.stacked().astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(DF_MAGIC)
        fh.write(struct.pack("<II", field.width, field.height))
        fh.write(body)


def read_field(path: Union[str, Path]) -> DisplacementField:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != DF_MAGIC:
        raise InvalidParameterError(f"{path}: not a DF01 displacement field")
    width, height = struct.unpack("<II", data[4:12])
    expected = 12 + width * height * 8
    if len(data) != expected:
        raise InvalidParameterError(f"{path}: expected {expected} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width, 2)
    return DisplacementField(arr[:, :, 0], arr[:, :, 1])

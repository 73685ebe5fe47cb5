"""Intensity-based parametric registration with a regular-step gradient descent.

The cost is the overlap-weighted mean squared difference between the warped
moving image and the fixed image, plus an optional penalty ``gamma * ||T - I||_F^2``.
Parameters always live in full-resolution units (pixels, degrees,
dimensionless), also while optimizing on coarser pyramid levels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateOverlapError, InvalidParameterError, RegistrationFailedError
from .geometry import AffineTransform, image_center
from .imagecore import build_pyramid, ensure_gray, sample_bilinear

MODEL_SIZES = {"translation": 2, "rigid": 3, "similarity": 4, "affine": 6}

# parameter roles per model: "t" translation (px), "q" angle (deg), "l" dimensionless linear term
_ROLES = {
    "translation": "tt",
    "rigid": "qtt",
    "similarity": "qltt",
    "affine": "lllltt",
}
_FD_EPS = {"t": 0.05, "q": 0.05, "l": 5e-4}


def identity_params(kind: str) -> np.ndarray:
    if kind not in MODEL_SIZES:
        raise InvalidParameterError(f"unknown model kind {kind!r}")
    if kind == "similarity":
        return np.array([0.0, 1.0, 0.0, 0.0])
    if kind == "affine":
        return np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    return np.zeros(MODEL_SIZES[kind])


@dataclass(frozen=True)
class ParamModel:
    """A parameter vector ``mu`` for one of the supported transform models.

    * translation: ``(tx, ty)``
    * rigid: ``(q, tx, ty)``, ``q`` in degrees about ``center``
    * similarity: ``(q, s, tx, ty)``
    * affine: ``(a11, a12, a21, a22, tx, ty)``, linear part about ``center``
    """

    kind: str
    mu: Sequence[float]

    def __post_init__(self):
        if self.kind not in MODEL_SIZES:
            raise InvalidParameterError(f"unknown model kind {self.kind!r}")
        mu = np.asarray(self.mu, dtype=np.float64).copy()
        if mu.shape != (MODEL_SIZES[self.kind],):
            raise InvalidParameterError(
                f"{self.kind} needs {MODEL_SIZES[self.kind]} parameters, got shape {mu.shape}"
            )
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def identity(cls, kind: str) -> "ParamModel":
        return cls(kind, identity_params(kind))

    def to_affine(self, center: Sequence[float] = (0.0, 0.0)) -> AffineTransform:
        return AffineTransform(params_to_matrix(self.kind, self.mu, center))


def params_to_matrix(kind: str, mu: np.ndarray, center: Sequence[float]) -> np.ndarray:
    if kind == "translation":
        lin = np.eye(2)
        t = mu
    elif kind == "rigid":
        q = math.radians(mu[0])
        lin = np.array([[math.cos(q), -math.sin(q)], [math.sin(q), math.cos(q)]])
        t = mu[1:]
    elif kind == "similarity":
        q = math.radians(mu[0])
        lin = mu[1] * np.array([[math.cos(q), -math.sin(q)], [math.sin(q), math.cos(q)]])
        t = mu[2:]
    else:
        lin = np.array([[mu[0], mu[1]], [mu[2], mu[3]]])
        t = mu[4:]
    c = np.asarray(center, dtype=np.float64)
    m = np.eye(3)
    m[:2, :2] = lin
    m[:2, 2] = c - lin @ c + t
    return m


@dataclass(frozen=True)
class OptimizerConfig:
    initial_step: float = 1.0
    min_step: float = 1e-4
    relaxation: float = 0.5
    max_iters: int = 200
    pyramid_levels: int = 3
    gamma: float = 0.0
    center: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if not self.initial_step > self.min_step > 0:
            raise InvalidParameterError("need initial_step > min_step > 0")
        if not 0 < self.relaxation < 1:
            raise InvalidParameterError("relaxation must be in (0, 1)")
        if self.max_iters < 1 or self.pyramid_levels < 1:
            raise InvalidParameterError("max_iters and pyramid_levels must be >= 1")
        if self.gamma < 0:
            raise InvalidParameterError("gamma must be >= 0")


@lru_cache(maxsize=16)
def _grid(h: int, w: int):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs.setflags(write=False)
    ys.setflags(write=False)
    return xs, ys


class _LevelCost:
    """Masked MSE on one pyramid level for full-resolution transform matrices."""

    def __init__(self, moving: np.ndarray, fixed: np.ndarray, level: int):
        self.moving = moving
        self.fixed = fixed
        h, w = moving.shape
        self.xs, self.ys = _grid(h, w)
        s = float(2**level)
        o = (s - 1.0) / 2.0
        self.to_full = np.array([[s, 0.0, o], [0.0, s, o], [0.0, 0.0, 1.0]])
        self.from_full = np.linalg.inv(self.to_full)

    def mse(self, m_full: np.ndarray) -> float:
        m = self.from_full @ m_full @ self.to_full
        sx = m[0, 0] * self.xs + m[0, 1] * self.ys + m[0, 2]
        sy = m[1, 0] * self.xs + m[1, 1] * self.ys + m[1, 2]
        h, w = self.moving.shape
        wgt = overlap_weight(sx, w) * overlap_weight(sy, h)
        mask = wgt > 0
        total = float(wgt[mask].sum()) if mask.any() else 0.0
        if total == 0.0:
            raise DegenerateOverlapError("transformed moving image does not overlap the fixed image")
        vals = sample_bilinear(self.moving, sx[mask], sy[mask])
        return float(np.sum(wgt[mask] * (vals - self.fixed[mask]) ** 2) / total)


def overlap_weight(s: np.ndarray, n: int) -> np.ndarray:
    """1 inside the moving image, ramping linearly to 0 over the outermost pixel.

    A hard in-bounds mask makes the cost jump whenever a column of pixels
    enters or leaves the overlap; the ramp keeps it continuous in the parameters.
    """
    return np.clip(np.minimum(s, (n - 1) - s), 0.0, 1.0)


def penalty(m: np.ndarray) -> float:
    return float(np.sum((m - np.eye(3)) ** 2))


def cost(mu: ParamModel, moving, fixed, gamma: float = 0.0, center=None) -> float:
    """Masked MSE of ``warp(moving, T_mu)`` against ``fixed`` plus ``gamma * P(T_mu)``."""
    mv, fx = ensure_gray(moving), ensure_gray(fixed)
    if mv.shape != fx.shape:
        raise InvalidParameterError("moving and fixed must have equal size")
    if center is None:
        center = image_center(mv.shape[1], mv.shape[0])
    m = params_to_matrix(mu.kind, mu.mu, center)
    return _LevelCost(mv, fx, 0).mse(m) + gamma * penalty(m)


def param_scales(kind: str, width: int, height: int) -> np.ndarray:
    """Size of a parameter change that moves image content by roughly one pixel."""
    radius = max(width, height) / 2.0
    unit = {"t": 1.0, "q": math.degrees(1.0 / radius), "l": 1.0 / radius}
    return np.array([unit[r] for r in _ROLES[kind]])


def fd_epsilons(kind: str) -> np.ndarray:
    return np.array([_FD_EPS[r] for r in _ROLES[kind]])


def fd_gradient(f, mu: np.ndarray, eps: np.ndarray) -> np.ndarray:
    g = np.empty_like(mu)
    for i in range(len(mu)):
        e = np.zeros_like(mu)
        e[i] = eps[i]
        g[i] = (f(mu + e) - f(mu - e)) / (2.0 * eps[i])
    return g


def register_intensity(
    moving,
    fixed,
    model_kind: str = "rigid",
    config: OptimizerConfig = OptimizerConfig(),
    init: Optional[Sequence[float]] = None,
):
    """Coarse-to-fine regular-step gradient descent on the masked-MSE cost.

    Returns ``(transform, diagnostics)``; ``transform`` maps fixed-image pixel
    coordinates to moving-image coordinates, so ``affine_to_field(transform)``
    is directly comparable with a ground-truth displacement field.
    """
    mv, fx = ensure_gray(moving), ensure_gray(fixed)
    if mv.shape != fx.shape:
        raise InvalidParameterError("moving and fixed must have equal size")
    h, w = mv.shape
    center = config.center if config.center is not None else image_center(w, h)
    mu = identity_params(model_kind) if init is None else np.asarray(init, dtype=np.float64).copy()
    if mu.shape != (MODEL_SIZES[model_kind],):
        raise InvalidParameterError(f"init must have {MODEL_SIZES[model_kind]} entries")
    scales = param_scales(model_kind, w, h)
    eps = fd_epsilons(model_kind)
    mv_pyr = build_pyramid(mv, config.pyramid_levels)
    fx_pyr = build_pyramid(fx, config.pyramid_levels)

    traces: list[list[float]] = []
    iterations: list[int] = []
    for level in reversed(range(config.pyramid_levels)):
        lc = _LevelCost(mv_pyr[level], fx_pyr[level], level)

        def f(p, lc=lc):
            m = params_to_matrix(model_kind, p, center)
            return lc.mse(m) + config.gamma * penalty(m)

        try:
            c = f(mu)
            g = fd_gradient(f, mu, eps) * scales
            trace = [c]
            step = config.initial_step
            it = 0
            while it < config.max_iters and step >= config.min_step:
                it += 1
                norm = float(np.linalg.norm(g))
                if norm == 0.0:
                    break
                cand = mu - step * scales * (g / norm)
                cc = f(cand)
                if cc < c:
                    mu, c = cand, cc
                    trace.append(c)
                    g_new = fd_gradient(f, mu, eps) * scales
                    if float(np.dot(g_new, g)) < 0.0:
                        step *= config.relaxation
                    g = g_new
                else:
                    step *= config.relaxation
        except DegenerateOverlapError as exc:
            raise RegistrationFailedError(str(exc), last_params=mu.copy()) from exc
        traces.append(trace)
        iterations.append(it)

    t = AffineTransform(params_to_matrix(model_kind, mu, center))
    diagnostics = {
        "model": model_kind,
        "params": mu.tolist(),
        "iterations": iterations,
        "final_cost": traces[-1][-1],
        "cost_trace": traces,
    }
    return t, diagnostics

"""Deformable registration by direct minimization of an unsupervised warp loss.

The field is parameterized by a coarse control grid that is bilinearly
upsampled to image size and then Gaussian blurred::

    phi   = upsample(params)
    phi'  = gauss(phi)
    loss  = MSE(moving o phi', fixed) + lam * mean ||grad phi'||^2

Every stage before the bilinear sampler is linear, so the gradient with
respect to the control values is computed exactly by pulling the pixel
gradient back through the transposed operators.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameterError, NumericFailureError
from .geometry import DisplacementField, interp_matrix, upsample_field
from .imagecore import blur_matrix, build_pyramid, ensure_gray


@dataclass(frozen=True)
class DeformConfig:
    lam: float = 1.0
    blur_sigma: float = 1.5
    control_grid: int = 32
    levels: int = 3
    step: float = 1.0
    max_iters: int = 300
    tol: float = 1e-5
    fill: str = "zero"

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidParameterError("lam must be >= 0")
        if not self.blur_sigma > 0:
            raise InvalidParameterError("blur_sigma must be > 0")
        if self.control_grid < 2:
            raise InvalidParameterError("control_grid must be >= 2")
        if self.levels < 1 or self.max_iters < 1:
            raise InvalidParameterError("levels and max_iters must be >= 1")
        if not self.tol > 0 or not self.step > 0:
            raise InvalidParameterError("tol and step must be > 0")
        if self.fill not in ("clamp", "zero"):
            raise InvalidParameterError(f"unknown fill policy {self.fill!r}")

    def as_dict(self) -> dict:
        return asdict(self)


class _Problem:
    """Loss and gradient for one image pair at one resolution and control-grid size."""

    def __init__(self, moving: np.ndarray, fixed: np.ndarray, grid_h: int, grid_w: int,
                 lam: float, blur_sigma: float, fill: str = "clamp"):
        if moving.shape != fixed.shape:
            raise InvalidParameterError(f"moving {moving.shape} and fixed {fixed.shape} differ in size")
        self.moving = moving
        self.fixed = fixed
        h, w = moving.shape
        self.h, self.w = h, w
        self.n = h * w
        self.lam = lam
        self.ay = interp_matrix(grid_h, h)
        self.ax = interp_matrix(grid_w, w)
        self.by = blur_matrix(h, float(blur_sigma))
        self.bx = blur_matrix(w, float(blur_sigma))
        # zero fill = sampling a copy framed by one ring of zeros, which keeps the warp continuous
        self.off = 1 if fill == "zero" else 0
        self.src = np.pad(moving, 1) if self.off else moving
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        self.xs, self.ys = xs + self.off, ys + self.off

    def smoothed_field(self, px: np.ndarray, py: np.ndarray):
        up_x = self.ay @ px @ self.ax.T
        up_y = self.ay @ py @ self.ax.T
        return self.by @ up_x @ self.bx.T, self.by @ up_y @ self.bx.T

    @staticmethod
    def _smooth(fx: np.ndarray, fy: np.ndarray) -> float:
        total = 0.0
        for f in (fx, fy):
            total += float(np.sum(np.diff(f, axis=1) ** 2) + np.sum(np.diff(f, axis=0) ** 2))
        return total

    @staticmethod
    def _smooth_grad(f: np.ndarray) -> np.ndarray:
        g = np.zeros_like(f)
        d = np.diff(f, axis=1)
        g[:, 1:] += 2.0 * d
        g[:, :-1] -= 2.0 * d
        d = np.diff(f, axis=0)
        g[1:, :] += 2.0 * d
        g[:-1, :] -= 2.0 * d
        return g

    def evaluate(self, px: np.ndarray, py: np.ndarray, want_grad: bool = True):
        fx, fy = self.smoothed_field(px, py)
        m = self.src
        h, w = m.shape
        sx = self.xs + fx
        sy = self.ys + fy
        cx = np.clip(sx, 0.0, w - 1)
        cy = np.clip(sy, 0.0, h - 1)
        x0 = np.minimum(np.floor(cx).astype(np.intp), w - 2)
        y0 = np.minimum(np.floor(cy).astype(np.intp), h - 2)
        ax = cx - x0
        ay = cy - y0
        i00 = m[y0, x0]
        i01 = m[y0, x0 + 1]
        i10 = m[y0 + 1, x0]
        i11 = m[y0 + 1, x0 + 1]
        top = i00 * (1.0 - ax) + i01 * ax
        bottom = i10 * (1.0 - ax) + i11 * ax
        warped = top * (1.0 - ay) + bottom * ay
        resid = warped - self.fixed
        data = float(np.mean(resid**2))
        smooth = self._smooth(fx, fy) / self.n
        loss = data + self.lam * smooth
        if not want_grad:
            return loss, data, smooth, None
        # right-derivative convention; zero where the sample coordinate is clamped
        dsx = np.where((sx >= 0) & (sx < w - 1), (1.0 - ay) * (i01 - i00) + ay * (i11 - i10), 0.0)
        dsy = np.where((sy >= 0) & (sy < h - 1), bottom - top, 0.0)
        coef = 2.0 * resid / self.n
        gfx = coef * dsx
        gfy = coef * dsy
        if self.lam:
            gfx += self.lam * self._smooth_grad(fx) / self.n
            gfy += self.lam * self._smooth_grad(fy) / self.n
        grads = []
        for gf in (gfx, gfy):
            g_up = self.by.T @ gf @ self.bx
            grads.append(self.ay.T @ g_up @ self.ax)
        return loss, data, smooth, (grads[0], grads[1])


def _check_pair(moving, fixed):
    mv, fx = ensure_gray(moving), ensure_gray(fixed)
    if mv.shape != fx.shape:
        raise InvalidParameterError(f"moving {mv.shape} and fixed {fx.shape} differ in size")
    if min(mv.shape) < 2:
        raise InvalidParameterError("images must be at least 2x2")
    return mv, fx


def deform_loss(field_params: DisplacementField, moving, fixed, cfg: DeformConfig = DeformConfig()):
    """Return ``(loss, {"data": ..., "smooth": ...})`` for control values ``field_params``."""
    mv, fx = _check_pair(moving, fixed)
    prob = _Problem(mv, fx, field_params.height, field_params.width, cfg.lam, cfg.blur_sigma, cfg.fill)
    loss, data, smooth, _ = prob.evaluate(field_params.dx, field_params.dy, want_grad=False)
    return loss, {"data": data, "smooth": smooth}


def deform_gradient(field_params: DisplacementField, moving, fixed, cfg: DeformConfig = DeformConfig()):
    """Exact gradient of :func:`deform_loss` with respect to every control value."""
    mv, fx = _check_pair(moving, fixed)
    prob = _Problem(mv, fx, field_params.height, field_params.width, cfg.lam, cfg.blur_sigma, cfg.fill)
    _, _, _, (gx, gy) = prob.evaluate(field_params.dx, field_params.dy)
    return DisplacementField(gx, gy)


def smoothed_field(field_params: DisplacementField, width: int, height: int, blur_sigma: float) -> DisplacementField:
    """Full-resolution blurred field ``gauss(upsample(params))``."""
    up = upsample_field(field_params, width, height)
    by = blur_matrix(height, float(blur_sigma))
    bx = blur_matrix(width, float(blur_sigma))
    return DisplacementField(by @ up.dx @ bx.T, by @ up.dy @ bx.T)


def grid_sizes(control_grid: int, levels: int) -> list[int]:
    """Control-grid edge per pyramid level, finest first, halving towards coarse levels."""
    return [max(2, int(round(control_grid / 2**k))) for k in range(levels)]


def _optimize_level(prob: _Problem, px: np.ndarray, py: np.ndarray, cfg: DeformConfig):
    loss, data, smooth, grad = prob.evaluate(px, py)
    if not math.isfinite(loss):
        raise NumericFailureError("non-finite loss at level start", [loss])
    trace = [loss]
    step = cfg.step
    it = 0
    while it < cfg.max_iters:
        it += 1
        gmax = max(float(np.abs(grad[0]).max()), float(np.abs(grad[1]).max()))
        if gmax == 0.0:
            break
        dx, dy = -grad[0] / gmax, -grad[1] / gmax
        accepted = None
        while step > 1e-9:
            cand = (px + step * dx, py + step * dy)
            c_loss, c_data, c_smooth, c_grad = prob.evaluate(*cand)
            if not math.isfinite(c_loss):
                raise NumericFailureError("non-finite loss during line search", trace + [c_loss])
            if c_loss < loss:
                accepted = cand
                break
            step *= 0.5
        if accepted is None:
            break
        rel = (loss - c_loss) / max(abs(loss), 1e-300)
        px, py = accepted
        loss, data, smooth, grad = c_loss, c_data, c_smooth, c_grad
        trace.append(loss)
        if rel < cfg.tol:
            break
        step = min(2.0 * step, 8.0 * cfg.step)
    return px, py, trace, it, data, smooth


def register_deformable(moving, fixed, cfg: DeformConfig = DeformConfig(), init: Optional[DisplacementField] = None):
    """Coarse-to-fine optimization of the control grid.

    Returns ``(phi_prime, diagnostics)`` where ``phi_prime`` is the smoothed
    full-resolution field, usable directly with ``warp(moving, phi_prime)``.
    """
    mv, fx = _check_pair(moving, fixed)
    h, w = mv.shape
    levels = cfg.levels
    mv_pyr = build_pyramid(mv, levels)
    fx_pyr = build_pyramid(fx, levels)
    sizes = grid_sizes(cfg.control_grid, levels)

    g = sizes[-1]
    if init is None:
        px = np.zeros((g, g))
        py = np.zeros((g, g))
    else:
        coarse = upsample_field(init, g, g).scaled(1.0 / 2 ** (levels - 1))
        px, py = coarse.dx.copy(), coarse.dy.copy()

    traces, iterations = [], []
    data = smooth = float("nan")
    for level in reversed(range(levels)):
        g = sizes[level]
        if px.shape != (g, g):
            nxt = upsample_field(DisplacementField(px, py), g, g)
            px, py = nxt.dx.copy(), nxt.dy.copy()
        prob = _Problem(mv_pyr[level], fx_pyr[level], g, g, cfg.lam, cfg.blur_sigma, cfg.fill)
        px, py, trace, it, data, smooth = _optimize_level(prob, px, py, cfg)
        traces.append(trace)
        iterations.append(it)
        if level > 0:
            px, py = 2.0 * px, 2.0 * py

    params = DisplacementField(px, py)
    phi = smoothed_field(params, w, h, cfg.blur_sigma)
    diagnostics = {
        "loss_trace": traces,
        "iterations": iterations,
        "final_loss": traces[-1][-1],
        "data": data,
        "smooth": smooth,
        "grid_sizes": sizes[::-1],
        "config": cfg.as_dict(),
    }
    return phi, diagnostics

"""Feature-based rigid registration: FAST-9 corners, BRIEF-256, Hamming matching, RANSAC affine."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateGeometryError,
    InsufficientMatchesError,
    InvalidParameterError,
    NoFeaturesError,
)
from .geometry import AffineTransform, invert_affine
from .imagecore import ensure_gray, gaussian_blur

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy)
CIRCLE = np.array(
    [(0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
     (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3)]
)
ARC_LENGTH = 9

PATCH_SIZE = 31
PATTERN_RADIUS = PATCH_SIZE // 2
N_BITS = 256
_PATTERN_SEED = 0x5EED_B21EF


def _make_pattern() -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(_PATTERN_SEED))
    pairs = []
    while len(pairs) < N_BITS:
        a, b = np.clip(np.rint(rng.normal(0.0, PATCH_SIZE / 5.0, (2, 2))), -PATTERN_RADIUS, PATTERN_RADIUS)
        if not np.array_equal(a, b):
            pairs.append(np.concatenate([a, b]))
    out = np.array(pairs, dtype=np.intp)
    out.setflags(write=False)
    return out


# (N_BITS, 4) integer offsets (ax, ay, bx, by)
PATTERN = _make_pattern()

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


class Keypoint(NamedTuple):
    x: int
    y: int
    score: float


class Match(NamedTuple):
    index_moving: int
    index_fixed: int
    distance: int


def fast_scores(gray: np.ndarray, threshold: float) -> np.ndarray:
    """FAST-9 corner score per pixel (0 where the segment test fails or the circle does not fit)."""
    g = np.asarray(gray, dtype=np.float64)
    h, w = g.shape
    scores = np.zeros((h, w))
    if h < 7 or w < 7:
        return scores
    center = g[3 : h - 3, 3 : w - 3]
    diff = np.stack([g[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx] - center for dx, dy in CIRCLE])
    best = np.zeros_like(center)
    for signed in (diff, -diff):
        ext = np.concatenate([signed, signed[: ARC_LENGTH - 1]])
        arc_min = ext[:16].copy()
        for k in range(1, ARC_LENGTH):
            np.minimum(arc_min, ext[k : k + 16], out=arc_min)
        # an arc qualifies iff its weakest pixel still clears the threshold
        margin = np.where(arc_min > threshold, arc_min, 0.0).max(axis=0)
        np.maximum(best, margin, out=best)
    scores[3 : h - 3, 3 : w - 3] = best
    return scores


def nonmax_suppress(scores: np.ndarray) -> np.ndarray:
    """3x3 suppression; ties go to the earlier pixel in raster order."""
    h, w = scores.shape
    p = np.pad(scores, 1, constant_values=-np.inf)
    keep = scores > 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            nb = p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            earlier = dy < 0 or (dy == 0 and dx < 0)
            keep &= (scores > nb) if earlier else (scores >= nb)
    return keep


def detect_fast(gray, threshold: float = 20.0, max_keypoints: int = 500, border: int = 3) -> list[Keypoint]:
    """FAST-9 corners with 3x3 non-maximum suppression, strongest ``max_keypoints`` first."""
    if not threshold > 0:
        raise InvalidParameterError("threshold must be > 0")
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim != 2:
        raise InvalidParameterError("detect_fast needs a single-channel image")
    scores = fast_scores(g, threshold)
    keep = nonmax_suppress(scores)
    border = max(int(border), 3)
    keep[:border] = keep[-border:] = False
    keep[:, :border] = keep[:, -border:] = False
    ys, xs = np.nonzero(keep)
    s = scores[ys, xs]
    order = np.lexsort((xs, ys, -s))[:max_keypoints]
    return [Keypoint(int(xs[i]), int(ys[i]), float(s[i])) for i in order]


def _brief_bits(smoothed: np.ndarray, xs: np.ndarray, ys: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    a = smoothed[ys[:, None] + pattern[None, :, 1], xs[:, None] + pattern[None, :, 0]]
    b = smoothed[ys[:, None] + pattern[None, :, 3], xs[:, None] + pattern[None, :, 2]]
    return np.packbits(a < b, axis=1)


def _fits(kp, h: int, w: int, radius: int) -> bool:
    return radius <= kp.x < w - radius and radius <= kp.y < h - radius


def describe_brief(gray, kp: Keypoint, pattern: np.ndarray = PATTERN, smoothed: bool = False,
                   sigma: float = 2.0) -> Optional[np.ndarray]:
    """256-bit BRIEF descriptor packed into 32 bytes, or ``None`` if the patch leaves the image.

    Pass ``smoothed=True`` when ``gray`` is already blurred.
    """
    g = np.asarray(gray, dtype=np.float64)
    radius = int(np.abs(pattern).max())
    if not _fits(kp, *g.shape, radius):
        return None
    if not smoothed:
        g = gaussian_blur(g, sigma)
    return _brief_bits(g, np.array([kp.x]), np.array([kp.y]), pattern)[0]


def describe_all(gray, keypoints: Sequence[Keypoint], pattern: np.ndarray = PATTERN, sigma: float = 2.0):
    """Describe every keypoint whose patch fits; returns ``(kept_keypoints, descriptors)``."""
    g = np.asarray(gray, dtype=np.float64)
    radius = int(np.abs(pattern).max())
    kept = [kp for kp in keypoints if _fits(kp, *g.shape, radius)]
    if not kept:
        return kept, np.zeros((0, N_BITS // 8), dtype=np.uint8)
    smoothed = gaussian_blur(g, sigma)
    xs = np.array([kp.x for kp in kept])
    ys = np.array([kp.y for kp in kept])
    return kept, _brief_bits(smoothed, xs, ys, pattern)


def hamming_distance(a, b) -> int:
    return int(_POPCOUNT[np.bitwise_xor(np.asarray(a, np.uint8), np.asarray(b, np.uint8))].sum())


def hamming_matrix(desc_m: np.ndarray, desc_f: np.ndarray) -> np.ndarray:
    dm = np.asarray(desc_m, dtype=np.uint8)
    df = np.asarray(desc_f, dtype=np.uint8)
    out = np.zeros((len(dm), len(df)), dtype=np.int64)
    for k in range(dm.shape[1]):
        out += _POPCOUNT[np.bitwise_xor(dm[:, k : k + 1], df[None, :, k])]
    return out


def match_hamming(desc_m, desc_f, keep_fraction: float = 0.5) -> list[Match]:
    """Mutual-nearest-neighbour matches sorted by distance, best ``ceil(keep_fraction * n)`` kept."""
    if not 0 < keep_fraction <= 1:
        raise InvalidParameterError("keep_fraction must be in (0, 1]")
    if len(desc_m) == 0 or len(desc_f) == 0:
        raise NoFeaturesError("no descriptors to match")
    d = hamming_matrix(desc_m, desc_f)
    fwd = d.argmin(axis=1)
    back = d.argmin(axis=0)
    matches = [Match(i, int(j), int(d[i, j])) for i, j in enumerate(fwd) if back[j] == i]
    matches.sort(key=lambda m: (m.distance, m.index_moving))
    n_keep = int(np.ceil(keep_fraction * len(matches)))
    return matches[:n_keep]


def _content_seed(src: np.ndarray, dst: np.ndarray, seed: int) -> int:
    digest = hashlib.sha256(np.ascontiguousarray(np.hstack([src, dst]), dtype="<f8").tobytes()).digest()
    return int(np.random.SeedSequence([int(seed), int.from_bytes(digest[:8], "little")]).generate_state(1, np.uint64)[0])


def fit_affine_lstsq(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares 3x3 affine matrix with ``dst ~ A @ [src, 1]``."""
    design = np.hstack([src, np.ones((len(src), 1))])
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    m = np.eye(3)
    m[:2] = sol.T
    return m


def ransac_affine(src, dst, iters: int = 1000, inlier_tol: float = 2.0, seed: int = 0):
    """Robust 6-DOF affine fit mapping ``src`` points onto ``dst`` points.

    Correspondences are put into a canonical order and the sampler is seeded
    from their content, so the result does not depend on input order.
    Returns ``(AffineTransform, inlier_mask)`` with the mask in input order.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 3:
        raise InsufficientMatchesError(f"need at least 3 correspondences, got {n}")
    if len(dst) != n:
        raise InvalidParameterError("src and dst must have equal length")
    order = np.lexsort((dst[:, 1], dst[:, 0], src[:, 1], src[:, 0]))
    s, d = src[order], dst[order]
    rng = np.random.Generator(np.random.Philox(_content_seed(s, d, seed)))
    samples = np.argsort(rng.random((iters, n)), axis=1)[:, :3]

    homog = np.concatenate([s[samples], np.ones((iters, 3, 1))], axis=2)  # (iters, 3, 3)
    det = np.linalg.det(homog)
    scale = np.abs(s).max() + 1.0
    valid = np.abs(det) > 1e-9 * scale * scale
    if not valid.any():
        raise DegenerateGeometryError("all RANSAC samples are collinear")
    homog_v = homog[valid]
    rhs = d[samples[valid]]  # (k, 3, 2)
    sol = np.linalg.solve(homog_v, rhs)  # (k, 3, 2): rows for x, y, 1 coefficients
    design = np.hstack([s, np.ones((n, 1))])
    pred = np.einsum("nj,kjc->knc", design, sol)
    err = np.linalg.norm(pred - d[None], axis=2)
    inliers = err < inlier_tol
    counts = inliers.sum(axis=1)
    best = int(np.argmax(counts))
    best_mask = inliers[best]
    m = fit_affine_lstsq(s[best_mask], d[best_mask])
    mask = np.zeros(n, dtype=bool)
    mask[order] = best_mask
    return AffineTransform(m), mask


def estimate_affine_ransac(matches: Sequence[Match], kps_m: Sequence[Keypoint], kps_f: Sequence[Keypoint],
                           iters: int = 1000, inlier_tol: float = 2.0, seed: int = 0):
    """RANSAC affine taking moving keypoint coordinates to fixed keypoint coordinates."""
    if len(matches) < 3:
        raise InsufficientMatchesError(f"need at least 3 matches, got {len(matches)}")
    src = np.array([(kps_m[mt.index_moving].x, kps_m[mt.index_moving].y) for mt in matches], dtype=np.float64)
    dst = np.array([(kps_f[mt.index_fixed].x, kps_f[mt.index_fixed].y) for mt in matches], dtype=np.float64)
    return ransac_affine(src, dst, iters, inlier_tol, seed)


@dataclass(frozen=True)
class FeatureConfig:
    fast_threshold: float = 20.0
    max_keypoints: int = 500
    keep_fraction: float = 0.5
    ransac_iters: int = 1000
    inlier_tol: float = 2.0
    brief_sigma: float = 2.0
    seed: int = 0


def register_feature(moving, fixed, config: FeatureConfig = FeatureConfig()):
    """Grayscale, detect, describe, match, RANSAC.

    Returns ``(transform, diagnostics)`` where ``transform`` maps fixed pixel
    coordinates to moving coordinates (the inverse of the moving-to-fixed
    RANSAC estimate), matching the backward-warp field convention.
    """
    mv, fx = ensure_gray(moving), ensure_gray(fixed)
    if mv.shape != fx.shape:
        raise InvalidParameterError("moving and fixed must have equal size")
    radius = int(np.abs(PATTERN).max())
    kps = []
    descs = []
    for img in (mv, fx):
        found = detect_fast(img, config.fast_threshold, config.max_keypoints, border=radius)
        kept, desc = describe_all(img, found, sigma=config.brief_sigma)
        kps.append(kept)
        descs.append(desc)
    if len(kps[0]) == 0 or len(kps[1]) == 0:
        raise NoFeaturesError(f"keypoints found: moving={len(kps[0])}, fixed={len(kps[1])}")
    matches = match_hamming(descs[0], descs[1], config.keep_fraction)
    a, mask = estimate_affine_ransac(matches, kps[0], kps[1], config.ransac_iters, config.inlier_tol, config.seed)
    diagnostics = {
        "keypoints_moving": len(kps[0]),
        "keypoints_fixed": len(kps[1]),
        "matches": len(matches),
        "inliers": int(mask.sum()),
        "inlier_ratio": float(mask.mean()),
        "moving_to_fixed": a.m.tolist(),
    }
    return invert_affine(a), diagnostics

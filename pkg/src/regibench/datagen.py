"""Synthetic pair generation with ground-truth displacement fields.

Each pair takes a moving image, draws a random transform from one of five
families, produces the fixed image by backward warping (zero fill) and keeps
the ground-truth field. Randomness comes from numpy's counter-based Philox
generator keyed by ``(master_seed, pair_index)``, so every pair is
reproducible on its own and independent of generation order.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import InvalidParameterError
from .geometry import (
    AffineTransform,
    DisplacementField,
    affine_to_field,
    image_center,
    interp_matrix,
    make_affine,
    read_field,
    upsample_field,
    warp,
    write_field,
)
from .imagecore import as_image, gaussian_blur, quantize, read_image, write_png

log = logging.getLogger(__name__)

FAMILIES = ("translation", "rotation", "scaling", "shearing", "pixelwise")
RIGID_FAMILIES = ("translation", "rotation", "scaling", "shearing")
FAMILY_ALIASES = {"rigidset": RIGID_FAMILIES, "nonrigidset": ("pixelwise",)}

DEFAULT_RANGES: dict[str, dict[str, tuple[float, float]]] = {
    "translation": {"tx": (-5.0, 5.0), "ty": (-5.0, 5.0)},
    "shearing": {"shx": (0.0, 0.15), "shy": (0.0, 0.15)},
    "scaling": {"sx": (0.9, 1.0), "sy": (0.9, 1.0)},
    "rotation": {"q": (-5.0, 5.0)},
    "pixelwise": {"p": (-5.0, 5.0)},
}
PIXELWISE_GRID = 8

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif", ".webp"}
MANIFEST_HEADER = ("pair_id", "family", "seed", "params_json", "moving_path", "fixed_path", "field_path")


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def pair_seed(master_seed: int, pair_index: int) -> int:
    """64-bit per-pair seed hashed from the master seed and the pair index."""
    words = np.random.SeedSequence([int(master_seed), int(pair_index)]).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


@dataclass(frozen=True)
class GenSpec:
    family: str
    seed: int = 0
    output_size: int = 256
    ranges: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParameterError(f"unknown family {self.family!r}")
        merged = dict(DEFAULT_RANGES[self.family])
        for name, (lo, hi) in dict(self.ranges).items():
            if name not in merged:
                raise InvalidParameterError(f"{self.family} has no parameter {name!r}")
            if lo > hi:
                raise InvalidParameterError(f"empty range for {name}: [{lo}, {hi}]")
            merged[name] = (float(lo), float(hi))
        object.__setattr__(self, "ranges", merged)
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidParameterError("seed must be an unsigned 64-bit integer")

    def rng(self) -> np.random.Generator:
        return rng_for(self.seed)


@dataclass(frozen=True)
class TransformDraw:
    family: str
    params: dict
    transform: Optional[AffineTransform] = None
    control: Optional[DisplacementField] = None


@dataclass(frozen=True, eq=False)
class PairSample:
    moving: np.ndarray
    fixed: np.ndarray
    gt_field: DisplacementField
    family: str
    draw: dict
    pair_id: str = ""
    seed: int = 0


def draw_transform(gen: GenSpec, rng: np.random.Generator, center=None) -> TransformDraw:
    """Draw one random transform; pixelwise draws an 8x8 control grid per axis."""
    if center is None:
        center = image_center(gen.output_size, gen.output_size)
    if gen.family == "pixelwise":
        lo, hi = gen.ranges["p"]
        px = rng.uniform(lo, hi, size=(PIXELWISE_GRID, PIXELWISE_GRID))
        py = rng.uniform(lo, hi, size=(PIXELWISE_GRID, PIXELWISE_GRID))
        return TransformDraw(
            "pixelwise",
            {"px": px.tolist(), "py": py.tolist()},
            control=DisplacementField(px, py),
        )
    params = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in gen.ranges.items()}
    return TransformDraw(gen.family, params, transform=make_affine(gen.family, params, center))


def field_from_draw(draw: TransformDraw, width: int, height: int) -> DisplacementField:
    """Ground-truth field, rounded to float32 so the in-memory field equals the DF01 file."""
    if draw.control is not None:
        f = upsample_field(draw.control, width, height)
    else:
        f = affine_to_field(draw.transform, width, height)
    return f.as_float32()


def generate_pair(moving, gen: GenSpec, rng: Optional[np.random.Generator] = None) -> PairSample:
    moving = as_image(moving)
    h, w = moving.shape[:2]
    if (h, w) != (gen.output_size, gen.output_size):
        raise InvalidParameterError(
            f"moving image is {w}x{h}; resize to {gen.output_size} first"
        )
    draw = draw_transform(gen, gen.rng() if rng is None else rng, image_center(w, h))
    gt = field_from_draw(draw, w, h)
    fixed = warp(moving, gt, fill="zero")
    return PairSample(moving, fixed, gt, gen.family, draw.params, seed=gen.seed)


def resize_to(img, size: int) -> np.ndarray:
    """Stretch to ``size x size`` with corner-aligned bilinear resampling."""
    if size < 2:
        raise InvalidParameterError("size must be >= 2")
    arr = as_image(img)
    h, w = arr.shape[:2]
    if (h, w) == (size, size):
        return arr.copy()
    ay = interp_matrix(h, size) if h > 1 else np.ones((size, 1))
    ax = interp_matrix(w, size) if w > 1 else np.ones((size, 1))
    if arr.ndim == 2:
        return ay @ arr @ ax.T
    return np.stack([ay @ arr[:, :, c] @ ax.T for c in range(arr.shape[2])], axis=2)


def _polygon_mask(xs, ys, verts: np.ndarray) -> np.ndarray:
    """Inside test for a convex polygon with counter-clockwise vertices."""
    inside = np.ones(xs.shape, dtype=bool)
    for (x0, y0), (x1, y1) in zip(verts, np.roll(verts, -1, axis=0)):
        inside &= (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0) >= 0
    return inside


def synth_test_image(seed: int, size: int = 256) -> np.ndarray:
    """Deterministic RGB test image: smooth multi-scale noise plus straight-edged shapes."""
    if size < 16:
        raise InvalidParameterError("size must be >= 16")
    rng = rng_for(seed)
    img = np.zeros((size, size, 3))
    for sigma, amp in ((size / 16.0, 45.0), (size / 64.0, 30.0), (1.0, 8.0)):
        noise = gaussian_blur(rng.standard_normal((size, size, 3)), sigma)
        img += amp * noise / noise.std()
    img += 128.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(14):
        cx, cy = rng.uniform(0.1 * size, 0.9 * size, 2)
        radius = rng.uniform(0.05, 0.15) * size
        n_vert = int(rng.integers(3, 7))
        angles = np.sort(rng.uniform(0.0, 2 * np.pi, n_vert))
        verts = np.stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)], axis=1)
        mask = _polygon_mask(xs, ys, verts)
        color = rng.uniform(0.0, 255.0, 3)
        img[mask] = 0.25 * img[mask] + 0.75 * color
    return np.clip(img, 0.0, 255.0)


def expand_families(tokens: Iterable[str]) -> list[str]:
    out: list[str] = []
    for tok in tokens:
        tok = tok.strip()
        if not tok:
            continue
        names = FAMILY_ALIASES.get(tok, (tok,))
        for name in names:
            if name not in FAMILIES:
                raise InvalidParameterError(f"unknown family {name!r}")
            if name not in out:
                out.append(name)
    return out


def list_images(input_dir: Union[str, Path]) -> list[Path]:
    d = Path(input_dir)
    if not d.is_dir():
        raise OSError(f"input directory not found: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
    if not files:
        raise OSError(f"no readable images in {d}")
    return files


def _load_input(path: Path) -> np.ndarray:
    try:
        img = read_image(path)
    except Exception as exc:  # PIL raises several unrelated types
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return img


def generate_dataset(
    input_dir: Union[str, Path],
    families: Sequence[str],
    out_dir: Union[str, Path],
    counts: Union[int, Mapping[str, int]] = 40,
    master_seed: int = 0,
    size: int = 256,
    ranges: Optional[Mapping[str, Mapping[str, tuple[float, float]]]] = None,
) -> Path:
    """Generate a dataset and write ``manifest.csv``; returns the manifest path.

    Pairs are numbered family by family; pair ``i`` uses input image
    ``i mod n_images`` and seed ``pair_seed(master_seed, i)``.
    """
    fams = expand_families(families)
    if isinstance(counts, int):
        counts = {f: counts for f in fams}
    out = Path(out_dir)
    for sub in ("moving", "fixed", "fields"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    images = list_images(input_dir)
    cache: dict[Path, np.ndarray] = {}

    rows = []
    index = 0
    for fam in fams:
        for _ in range(int(counts.get(fam, 0))):
            src = images[index % len(images)]
            if src not in cache:
                cache[src] = quantize(resize_to(_load_input(src), size))
            seed = pair_seed(master_seed, index)
            gen = GenSpec(fam, seed=seed, output_size=size, ranges=(ranges or {}).get(fam, {}))
            pair = generate_pair(cache[src], gen)
            pid = f"{index:05d}_{fam}"
            paths = {k: f"{k}/{pid}.png" for k in ("moving", "fixed")}
            paths["field"] = f"fields/{pid}.df01"
            write_png(out / paths["moving"], pair.moving)
            write_png(out / paths["fixed"], pair.fixed)
            write_field(out / paths["field"], pair.gt_field)
            rows.append(
                (pid, fam, str(seed), json.dumps(pair.draw, sort_keys=True),
                 paths["moving"], paths["fixed"], paths["field"])
            )
            index += 1
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
    log.info("wrote %d pairs to %s", len(rows), out)
    return manifest


def read_manifest(path: Union[str, Path]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
            raise InvalidParameterError(f"{path}: unexpected manifest header {reader.fieldnames}")
        return list(reader)


def load_pair(row: Mapping[str, str], base_dir: Union[str, Path]) -> PairSample:
    base = Path(base_dir)
    paths = {k: base / row[f"{k}_path"] for k in ("moving", "fixed", "field")}
    for kind, p in paths.items():
        if not p.is_file():
            raise OSError(f"pair {row['pair_id']}: missing {kind} file {p}")
    return PairSample(
        moving=read_image(paths["moving"]),
        fixed=read_image(paths["fixed"]),
        gt_field=read_field(paths["field"]),
        family=row["family"],
        draw=json.loads(row["params_json"]),
        pair_id=row["pair_id"],
        seed=int(row["seed"]),
    )

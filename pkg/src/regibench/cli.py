"""Command-line entry point: ``regibench {synth,generate,register,bench,montage}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .datagen import expand_families, generate_dataset, synth_test_image
from .deform import DeformConfig, register_deformable
from .errors import RegiBenchError
from .evalbench import METHODS, SEED_ENV, BenchConfig, render_montages, run_benchmark
from .feature import FeatureConfig, register_feature
from .geometry import affine_to_field, write_field
from .imagecore import read_image, write_png
from .rigid import MODEL_SIZES, OptimizerConfig, register_intensity


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def add_method_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("method settings")
    g.add_argument("--model", choices=sorted(MODEL_SIZES), default="rigid", help="intensity-based transform model")
    g.add_argument("--gamma", type=float, default=0.0, help="intensity-based penalty weight")
    g.add_argument("--initial-step", type=float, default=1.0)
    g.add_argument("--min-step", type=float, default=1e-4)
    g.add_argument("--relaxation", type=float, default=0.5)
    g.add_argument("--pyramid-levels", type=int, default=3)
    g.add_argument("--rigid-max-iters", type=int, default=200)
    g.add_argument("--fast-threshold", type=float, default=20.0)
    g.add_argument("--max-keypoints", type=int, default=500)
    g.add_argument("--keep-fraction", type=float, default=0.5)
    g.add_argument("--ransac-iters", type=int, default=1000)
    g.add_argument("--inlier-tol", type=float, default=2.0)
    g.add_argument("--lambda", dest="lam", type=float, default=1.0, help="deformable smoothness weight")
    g.add_argument("--sigma", type=float, default=1.5, help="deformable field blur sigma")
    g.add_argument("--control-grid", type=int, default=32)
    g.add_argument("--levels", type=int, default=3, help="deformable pyramid levels")
    g.add_argument("--max-iters", type=int, default=300, help="deformable iterations per level")
    g.add_argument("--tol", type=float, default=1e-5)
    g.add_argument("--fill", choices=("zero", "clamp"), default="zero", help="deformable loss sampling fill")


def bench_config(args) -> BenchConfig:
    return BenchConfig(
        intensity=OptimizerConfig(
            initial_step=args.initial_step, min_step=args.min_step, relaxation=args.relaxation,
            max_iters=args.rigid_max_iters, pyramid_levels=args.pyramid_levels, gamma=args.gamma,
        ),
        intensity_model=args.model,
        feature=FeatureConfig(
            fast_threshold=args.fast_threshold, max_keypoints=args.max_keypoints,
            keep_fraction=args.keep_fraction, ransac_iters=args.ransac_iters, inlier_tol=args.inlier_tol,
        ),
        deform=DeformConfig(
            lam=args.lam, blur_sigma=args.sigma, control_grid=args.control_grid, levels=args.levels,
            max_iters=args.max_iters, tol=args.tol, fill=args.fill,
        ),
    )


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        write_png(out / f"synth_{i:04d}.png", synth_test_image(args.seed + i, args.size))
    print(f"wrote {args.count} images to {out}")
    return 0


def cmd_generate(args) -> int:
    families = expand_families(_csv_list(args.families))
    manifest = generate_dataset(args.input, families, args.out, args.count, args.seed, args.size)
    print(manifest)
    return 0


def cmd_register(args) -> int:
    cfg = bench_config(args)
    moving, fixed = read_image(args.moving), read_image(args.fixed)
    h, w = moving.shape[:2]
    if args.method == "intensity":
        t, diag = register_intensity(moving, fixed, cfg.intensity_model, cfg.intensity)
        field = affine_to_field(t, w, h)
        diag["transform"] = t.m.tolist()
    elif args.method == "feature":
        t, diag = register_feature(moving, fixed, replace(cfg.feature, seed=_default_seed()))
        field = affine_to_field(t, w, h)
        diag["transform"] = t.m.tolist()
    else:
        field, diag = register_deformable(moving, fixed, cfg.deform)
        diag.pop("loss_trace", None)
    write_field(args.out_field, field)
    if args.moved:
        from .geometry import warp
        write_png(args.moved, warp(moving, field, fill="zero"))
    diag.pop("cost_trace", None)
    print(json.dumps(diag, indent=2, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    report = run_benchmark(args.manifest, _csv_list(args.methods), bench_config(args), args.out, args.jobs)
    print(report.to_markdown())
    return 0


def cmd_montage(args) -> int:
    written = render_montages(args.manifest, args.results, args.out, _csv_list(args.methods))
    print(f"wrote {len(written)} montages to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regibench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic textured test images")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("generate", help="generate moving/fixed pairs with ground-truth fields")
    p.add_argument("--input", required=True, help="directory of source images")
    p.add_argument("--out", required=True)
    p.add_argument("--families", default="rigidset,nonrigidset",
                   help="comma list of families, or rigidset / nonrigidset")
    p.add_argument("--count", type=int, default=40, help="pairs per family")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("register", help="register one image pair")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--fixed", required=True)
    p.add_argument("--out-field", required=True, help="output DF01 file")
    p.add_argument("--moved", help="optional PNG of the warped moving image")
    add_method_flags(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("bench", help="evaluate methods over a generated dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    add_method_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("montage", help="render visual comparison strips from bench output")
    p.add_argument("--manifest", required=True)
    p.add_argument("--results", required=True, help="bench output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--methods", default=",".join(METHODS))
    p.set_defaults(func=cmd_montage)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", "absent") is None:
        args.seed = _default_seed()
    try:
        return args.func(args)
    except (RegiBenchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

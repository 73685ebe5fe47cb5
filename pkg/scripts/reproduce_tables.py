#!/usr/bin/env python3
"""Run the full comparison on synthetic inputs: images, dataset, benchmark, montages.

    python scripts/reproduce_tables.py --out runs/full --count 40

Writes report.md / report.csv with per-family mean +- std RMSE and MAE for the
three methods, plus one montage strip per pair.
"""
import argparse
import logging
import time
from pathlib import Path

from regibench.datagen import FAMILIES, generate_dataset, synth_test_image
from regibench.evalbench import METHODS, BenchConfig, render_montages, run_benchmark
from regibench.imagecore import write_png


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/full")
    ap.add_argument("--images", type=int, default=8, help="number of synthetic source images")
    ap.add_argument("--count", type=int, default=40, help="pairs per family")
    ap.add_argument("--families", default=",".join(FAMILIES))
    ap.add_argument("--methods", default=",".join(METHODS))
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--no-montage", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    src = out / "inputs"
    src.mkdir(parents=True, exist_ok=True)
    for i in range(args.images):
        write_png(src / f"synth_{i:04d}.png", synth_test_image(args.seed + i, args.size))

    t0 = time.perf_counter()
    manifest = generate_dataset(src, args.families.split(","), out / "data", args.count, args.seed, args.size)
    logging.info("dataset ready in %.1f s", time.perf_counter() - t0)

    t0 = time.perf_counter()
    report = run_benchmark(manifest, args.methods.split(","), BenchConfig(), out / "bench", args.jobs)
    logging.info("benchmark done in %.1f s", time.perf_counter() - t0)
    print(report.to_markdown())

    if not args.no_montage:
        written = render_montages(manifest, out / "bench", out / "montage", args.methods.split(","))
        logging.info("%d montages in %s", len(written), out / "montage")


if __name__ == "__main__":
    main()

"""Field metrics, benchmark orchestration, and report / montage emitters."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import errors
from .datagen import FAMILIES, PairSample, load_pair, read_manifest
from .deform import DeformConfig, register_deformable
from .feature import FeatureConfig, register_feature
from .geometry import DisplacementField, affine_to_field, read_field, warp, write_field
from .imagecore import as_image, write_png
from .rigid import OptimizerConfig, register_intensity

log = logging.getLogger(__name__)

METHODS = ("intensity", "feature", "deform")
METRICS = ("rmse_x", "rmse_y", "mae_x", "mae_y")
SEED_ENV = "REGIBENCH_SEED"

_REASONS = {
    errors.NoFeaturesError: "no-features",
    errors.InsufficientMatchesError: "insufficient-matches",
    errors.DegenerateGeometryError: "degenerate-geometry",
    errors.RegistrationFailedError: "registration-failed",
    errors.DegenerateOverlapError: "degenerate-overlap",
    errors.NumericFailureError: "numeric-failure",
    errors.SingularTransformError: "singular-transform",
}


def _check_same(est: DisplacementField, gt: DisplacementField):
    if est.shape != gt.shape:
        raise errors.InvalidParameterError(f"field shapes differ: {est.shape} vs {gt.shape}")


def field_rmse(est: DisplacementField, gt: DisplacementField) -> tuple[float, float]:
    _check_same(est, gt)
    return (float(np.sqrt(np.mean((est.dx - gt.dx) ** 2))),
            float(np.sqrt(np.mean((est.dy - gt.dy) ** 2))))


def field_mae(est: DisplacementField, gt: DisplacementField) -> tuple[float, float]:
    _check_same(est, gt)
    return float(np.mean(np.abs(est.dx - gt.dx))), float(np.mean(np.abs(est.dy - gt.dy)))


@dataclass(frozen=True)
class BenchConfig:
    """Settings for every method; echoed verbatim into each report."""

    intensity: OptimizerConfig = field(default_factory=OptimizerConfig)
    intensity_model: str = "rigid"
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    deform: DeformConfig = field(default_factory=DeformConfig)
    seed_override: Optional[int] = None

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class MethodResult:
    pair_id: str
    family: str
    method: str
    est_field: Optional[DisplacementField]
    rmse_x: float = math.nan
    rmse_y: float = math.nan
    mae_x: float = math.nan
    mae_y: float = math.nan
    wall_time: float = 0.0
    status: str = "ok"
    reason: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def estimate_field_for(method: str, pair: PairSample, config: BenchConfig = BenchConfig()) -> MethodResult:
    """Run one method on one pair; failures are captured in ``status`` instead of raised."""
    if method not in METHODS:
        raise errors.InvalidParameterError(f"unknown method {method!r}")
    h, w = pair.gt_field.shape
    seed = pair.seed if config.seed_override is None else config.seed_override
    t0 = time.perf_counter()
    try:
        if method == "intensity":
            t, diag = register_intensity(pair.moving, pair.fixed, config.intensity_model, config.intensity)
            est = affine_to_field(t, w, h)
        elif method == "feature":
            t, diag = register_feature(pair.moving, pair.fixed, replace(config.feature, seed=seed))
            est = affine_to_field(t, w, h)
        else:
            est, diag = register_deformable(pair.moving, pair.fixed, config.deform)
    except errors.RegiBenchError as exc:
        reason = next((r for cls, r in _REASONS.items() if isinstance(exc, cls)), type(exc).__name__)
        return MethodResult(pair.pair_id, pair.family, method, None,
                            wall_time=time.perf_counter() - t0, status="failed",
                            reason=f"{reason}: {exc}")
    elapsed = time.perf_counter() - t0
    rx, ry = field_rmse(est, pair.gt_field)
    mx, my = field_mae(est, pair.gt_field)
    return MethodResult(pair.pair_id, pair.family, method, est, rx, ry, mx, my, elapsed, diagnostics=diag)


@dataclass
class BenchReport:
    rows: list[dict]
    results: list[MethodResult]
    config: dict

    def row(self, family: str, method: str) -> dict:
        for r in self.rows:
            if r["family"] == family and r["method"] == method:
                return r
        raise KeyError((family, method))

    def to_markdown(self) -> str:
        fams = [f for f in FAMILIES if any(r["family"] == f for r in self.rows)]
        fams += sorted({r["family"] for r in self.rows} - set(fams))
        methods = list(dict.fromkeys(r["method"] for r in self.rows))
        lines = []
        for metric in METRICS:
            lines.append(f"### {metric.upper().replace('_', ' ')} (px)")
            lines.append("")
            lines.append("| family | " + " | ".join(methods) + " |")
            lines.append("|---" * (len(methods) + 1) + "|")
            for fam in fams:
                cells = []
                for m in methods:
                    try:
                        r = self.row(fam, m)
                    except KeyError:
                        cells.append("")
                        continue
                    if r["n_ok"]:
                        cell = f"{r[metric + '_mean']:.2f} ± {r[metric + '_std']:.2f}"
                    else:
                        cell = "n/a"
                    if r["n_failed"]:
                        cell += f" ({r['n_failed']} failed)"
                    cells.append(cell)
                lines.append(f"| {fam} | " + " | ".join(cells) + " |")
            lines.append("")
        return "\n".join(lines)


def summarize(results: Sequence[MethodResult]) -> list[dict]:
    """Mean and population std of every metric per (family, method) over ok pairs."""
    groups: dict[tuple[str, str], list[MethodResult]] = {}
    for r in results:
        groups.setdefault((r.family, r.method), []).append(r)
    fam_rank = {f: i for i, f in enumerate(FAMILIES)}
    method_rank = {m: i for i, m in enumerate(METHODS)}
    rows = []
    for (fam, method), rs in sorted(groups.items(), key=lambda kv: (fam_rank.get(kv[0][0], 99), kv[0][0],
                                                                     method_rank.get(kv[0][1], 99))):
        ok = [r for r in rs if r.ok]
        row = {"family": fam, "method": method, "n_ok": len(ok), "n_failed": len(rs) - len(ok)}
        for metric in METRICS:
            vals = np.array([getattr(r, metric) for r in ok])
            row[metric + "_mean"] = float(vals.mean()) if len(vals) else None
            row[metric + "_std"] = float(vals.std()) if len(vals) else None
        rows.append(row)
    return rows


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


RESULT_HEADER = ("pair_id", "family", "method", "status", "reason") + METRICS
REPORT_HEADER = ("family", "method", "n_ok", "n_failed") + tuple(
    f"{m}_{s}" for m in METRICS for s in ("mean", "std")
)


def _run_pair(args):
    row, base, methods, config = args
    pair = load_pair(row, base)
    return [estimate_field_for(m, pair, config) for m in methods]


def _seed_override(config: BenchConfig) -> BenchConfig:
    env = os.environ.get(SEED_ENV)
    if env is not None and config.seed_override is None:
        return replace(config, seed_override=int(env))
    return config


def run_benchmark(
    manifest: Union[str, Path],
    methods: Sequence[str] = METHODS,
    config: BenchConfig = BenchConfig(),
    out_dir: Optional[Union[str, Path]] = None,
    jobs: int = 1,
) -> BenchReport:
    """Evaluate every (pair, method) and optionally write results to ``out_dir``.

    Written files: ``results.csv`` (per pair), ``report.csv`` and ``report.md``
    (per family and method), ``config.json``, ``diagnostics.jsonl``,
    estimated fields under ``fields/`` and wall times in ``timings.csv``.
    Everything except ``timings.csv`` is byte-identical across reruns.
    """
    for m in methods:
        if m not in METHODS:
            raise errors.InvalidParameterError(f"unknown method {m!r}")
    config = _seed_override(config)
    manifest = Path(manifest)
    rows = read_manifest(manifest)
    base = manifest.parent
    for row in rows:
        for key in ("moving_path", "fixed_path", "field_path"):
            if not (base / row[key]).is_file():
                raise OSError(f"pair {row['pair_id']}: missing file {base / row[key]}")
    tasks = [(row, base, tuple(methods), config) for row in rows]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_pair = list(pool.map(_run_pair, tasks))
    else:
        per_pair = [_run_pair(t) for t in tasks]
    results = [r for rs in per_pair for r in rs]
    report = BenchReport(summarize(results), results,
                         {"methods": list(methods), "manifest": manifest.name, **config.as_dict()})
    if out_dir is not None:
        write_bench_outputs(report, out_dir)
    return report


def write_bench_outputs(report: BenchReport, out_dir: Union[str, Path]) -> None:
    out = Path(out_dir)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for r in report.results:
            w.writerow([r.pair_id, r.family, r.method, r.status, r.reason] + [_fmt(getattr(r, m)) for m in METRICS])
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for row in report.rows:
            w.writerow([row["family"], row["method"], row["n_ok"], row["n_failed"]]
                       + [_fmt(row[k]) for k in REPORT_HEADER[4:]])
    with open(out / "timings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("pair_id", "method", "wall_time_s"))
        for r in report.results:
            w.writerow([r.pair_id, r.method, f"{r.wall_time:.4f}"])
    with open(out / "diagnostics.jsonl", "w", encoding="utf-8") as fh:
        for r in report.results:
            fh.write(json.dumps({"pair_id": r.pair_id, "method": r.method, **r.diagnostics}, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(report.config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "report.md").write_text(report.to_markdown(), encoding="utf-8")
    for r in report.results:
        if r.ok and r.est_field is not None:
            write_field(out / "fields" / f"{r.pair_id}__{r.method}.df01", r.est_field)


def read_results_csv(path: Union[str, Path]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


SEPARATOR = 2
SEPARATOR_VALUE = 255.0


def render_montage(pair: PairSample, results: Sequence[MethodResult], out: Union[str, Path, None] = None) -> np.ndarray:
    """Side-by-side strip: moving | ground-truth warp | one warp per estimated field.

    Panels are separated by 2-px white bars. When ``out`` is given, the strip is
    written as PNG and the panel labels go to a CSV next to it.
    """
    if not results:
        raise errors.InvalidParameterError("need at least one method result")
    moving = as_image(pair.moving)
    h, w = moving.shape[:2]
    panels = [("moving", moving), ("ground_truth", warp(moving, pair.gt_field, fill="zero"))]
    for r in results:
        if r.est_field is None:
            panels.append((f"{r.method} (failed)", np.zeros_like(moving)))
        else:
            panels.append((r.method, warp(moving, r.est_field, fill="zero")))
    width = len(panels) * w + (len(panels) - 1) * SEPARATOR
    strip = np.full((h, width) + moving.shape[2:], SEPARATOR_VALUE)
    offsets = []
    for i, (_, img) in enumerate(panels):
        x = i * (w + SEPARATOR)
        strip[:, x : x + w] = img
        offsets.append(x)
    if out is not None:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_png(out, strip)
        with open(out.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("panel", "label", "x_offset", "width"))
            for i, ((label, _), x) in enumerate(zip(panels, offsets)):
                wr.writerow((i, label, x, w))
    return strip


def render_montages(manifest: Union[str, Path], results_dir: Union[str, Path], out_dir: Union[str, Path],
                    methods: Sequence[str] = METHODS) -> list[Path]:
    """One montage per manifest pair from the fields a previous ``bench`` run wrote."""
    manifest = Path(manifest)
    fields_dir = Path(results_dir) / "fields"
    written = []
    for row in read_manifest(manifest):
        pair = load_pair(row, manifest.parent)
        rs = []
        for m in methods:
            p = fields_dir / f"{pair.pair_id}__{m}.df01"
            if p.is_file():
                rs.append(MethodResult(pair.pair_id, pair.family, m, read_field(p)))
        if not rs:
            continue
        path = Path(out_dir) / f"{pair.pair_id}.png"
        render_montage(pair, rs, path)
        written.append(path)
    return written

"""Command-line surface: replay streams, generate scenes, benchmark,
and compare neighborhood modes.

Exit codes: 0 ok, 1 usage/configuration error, 2 data error.  Verbosity
comes from the FAWCON_LOG environment variable (debug/info/warning).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import synth
from .errors import DomainError, FawconError, FrameParseError, ParamFormatError
from .stream import Pipeline, PipelineConfig, read_frame, read_manifest

log = logging.getLogger("fawcon")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--half-interval", type=float, default=0.04,
                   help="slab half width h in meters (default 0.04)")
    p.add_argument("--merge-dist", type=float, default=0.01,
                   help="point correspondence distance in meters (default 0.01, must be < h)")
    p.add_argument("--child-dist", type=float, default=0.08,
                   help="octree child admission distance in meters (default 0.08)")
    p.add_argument("--rings", default="2",
                   help="ring order n (compare accepts a comma list, e.g. 1,2,3)")
    p.add_argument("--weight", default="const",
                   help="weight function: const | gauss:SIGMA | mlp:PATH")
    p.add_argument("--head", default="seed:0",
                   help="classification head: seed:N | PATH (FAWP1 file)")
    p.add_argument("--classes", type=int, default=2, help="number of classes (default 2)")
    p.add_argument("--cap", type=int, default=None,
                   help="uniform per-frame observation cap (default off)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for per-frame re-evaluation (default 1)")
    p.add_argument("--out", required=True, help="output directory")


def _single_ring(value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"--rings must be an integer here, got {value!r}") from None


def _config_from_args(args, feature_dim: int, rings: int) -> PipelineConfig:
    return PipelineConfig(
        feature_dim=feature_dim,
        num_classes=args.classes,
        half_width=args.half_interval,
        merge_dist=args.merge_dist,
        child_dist=args.child_dist,
        rings=rings,
        weight=args.weight,
        head=args.head,
        frame_cap=args.cap,
        threads=args.threads,
    )


def _load_frames(manifest_path):
    paths = read_manifest(manifest_path)
    return [read_frame(p, index=i) for i, p in enumerate(paths)]


# -- commands -------------------------------------------------------------------


def run_replay(manifest_path, args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = _load_frames(manifest_path)
    export_path = out / "labels.txt"
    report_path = out / "report.jsonl"
    if not frames:
        export_path.write_text("# fawcon labels: id x y z label uncertainty observations\n")
        report_path.write_text("")
        log.info("empty manifest: wrote empty export to %s", export_path)
        return {"frames": 0, "points": 0, "export": str(export_path)}
    config = _config_from_args(args, frames[0].features.shape[1], _single_ring(args.rings))
    pipeline = Pipeline(config)
    with open(report_path, "w", encoding="ascii") as rep:
        for frame in frames:
            report = pipeline.ingest(frame)
            rep.write(report.to_json() + "\n")
            log.info(
                "frame %d: +%d points, %d merged, acc=%s",
                frame.index, report.inserted, report.merged, report.mean_accuracy,
            )
    pipeline.export_labels(export_path)
    return {
        "frames": len(frames),
        "points": len(pipeline.store),
        "export": str(export_path),
        "report": str(report_path),
        "accuracy": pipeline.accuracy()[0],
    }


def run_bench(manifest_path, args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = _load_frames(manifest_path)
    csv_path = out / "bench.csv"
    if not frames:
        raise UsageError("benchmark needs at least one frame")
    config = _config_from_args(args, frames[0].features.shape[1], _single_ring(args.rings))
    pipeline = Pipeline(config)
    total_s = 0.0
    rows = []
    for frame in frames:
        t0 = time.perf_counter()
        report = pipeline.ingest(frame)
        dt = time.perf_counter() - t0
        total_s += dt
        rows.append(
            {
                "frame": frame.index,
                "points": len(pipeline.store),
                "insert_ms": round(report.insert_ms, 3),
                "rebuild_ms": round(report.rebuild_ms, 3),
                "conv_ms": round(report.conv_ms, 3),
                "fps": round(1.0 / dt, 3) if dt > 0 else float("inf"),
            }
        )
    with open(csv_path, "w", newline="", encoding="ascii") as f:
        writer = csv.DictWriter(f, fieldnames=["frame", "points", "insert_ms",
                                               "rebuild_ms", "conv_ms", "fps"])
        writer.writeheader()
        writer.writerows(rows)
    aggregate_fps = len(frames) / total_s if total_s > 0 else float("inf")
    print(f"aggregate_fps={aggregate_fps:.3f} frames={len(frames)} points={len(pipeline.store)}")
    return {"aggregate_fps": aggregate_fps, "rows": rows, "csv": str(csv_path)}


def mean_ring_size(pipeline: Pipeline, n: int) -> float:
    ids = np.arange(len(pipeline.store), dtype=np.int64)
    rows, members = pipeline.octrees.ring_members_flat(ids, n)
    return members.size / ids.size


def matched_euclidean_radius(positions: np.ndarray, target_mean: float) -> float:
    """Radius whose mean ball cardinality (center included) matches target."""
    from scipy.spatial import cKDTree

    tree = cKDTree(positions)
    span = positions.max(axis=0) - positions.min(axis=0)
    lo, hi = 1e-9, float(np.linalg.norm(span)) + 1e-9

    def mean_count(r):
        return tree.query_ball_point(positions, r, return_length=True).mean()

    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mean_count(mid) < target_mean:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def run_compare(manifest_path, args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = _load_frames(manifest_path)
    if not frames:
        raise UsageError("compare needs at least one frame")
    if frames[0].gt_labels is None:
        raise UsageError("compare needs ground-truth labels in the stream")
    try:
        n_range = [int(v) for v in str(args.rings).split(",")]
    except ValueError:
        raise UsageError(f"--rings must be a comma list of integers, got {args.rings!r}") from None
    feature_dim = frames[0].features.shape[1]

    results = []
    for n in n_range:
        config = _config_from_args(args, feature_dim, n)
        oct_pipe = Pipeline(config)
        for frame in frames:
            oct_pipe.ingest(frame)
        acc_oct = oct_pipe.accuracy()[0]
        target = mean_ring_size(oct_pipe, n)
        radius = matched_euclidean_radius(np.asarray(oct_pipe.store.positions), target)
        log.info("n=%d mean ring size %.2f -> matched radius %.4f", n, target, radius)

        euc_config = _config_from_args(args, feature_dim, n)
        euc_config.neighborhood_mode = "euclidean"
        euc_config.euclidean_radius = radius
        euc_pipe = Pipeline(euc_config)
        for frame in frames:
            euc_pipe.ingest(frame)
        acc_euc = euc_pipe.accuracy()[0]
        results.append(
            {"n": n, "radius": radius, "octree": acc_oct, "euclidean": acc_euc,
             "mean_ring_size": target}
        )

    csv_path = out / "compare.csv"
    with open(csv_path, "w", newline="", encoding="ascii") as f:
        writer = csv.writer(f)
        writer.writerow(["n", "mode", "accuracy"])
        for r in results:
            writer.writerow([r["n"], "octree", f"{r['octree']:.6f}"])
            writer.writerow([r["n"], "euclidean", f"{r['euclidean']:.6f}"])
    return {"results": results, "csv": str(csv_path)}


def run_gen(args) -> dict:
    kind = args.kind
    common = dict(seed=args.seed, frames=args.frames, feature_dim=args.din)
    if kind == "planes":
        scene = synth.gen_planes(
            gap=args.gap, spacing=args.spacing, side=args.side, **common
        )
    elif kind == "cylinder":
        scene = synth.gen_cylinder(
            radius=args.radius, length=args.length, spacing=args.spacing, **common
        )
    elif kind == "rooms":
        scene = synth.gen_rooms(
            side=args.side,
            height=args.height,
            spacing=args.spacing,
            sample_fraction=args.sample_fraction,
            points_per_frame=args.points_per_frame,
            noise_low=args.noise_low,
            **common,
        )
    else:  # argparse choices guard this
        raise UsageError(f"unknown scene kind {kind!r}")
    manifest = synth.write_scene(scene, args.out)
    total = sum(len(f) for f in scene.frames)
    print(f"wrote {len(scene.frames)} frames ({total} observations) under {args.out}")
    return {"manifest": str(manifest), "frames": len(scene.frames), "observations": total}


# -- entry point ------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="fawcon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_replay = sub.add_parser("replay", help="ingest a frame stream, export labels + reports")
    p_replay.add_argument("manifest")
    _add_config_flags(p_replay)

    p_gen = sub.add_parser("gen", help="generate a synthetic scene")
    p_gen.add_argument("--kind", choices=["planes", "cylinder", "rooms"], required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--frames", type=int, default=8)
    p_gen.add_argument("--din", type=int, default=8, help="input feature dimension")
    p_gen.add_argument("--gap", type=float, default=0.2)
    p_gen.add_argument("--spacing", type=float, default=0.02)
    p_gen.add_argument("--side", type=float, default=1.0)
    p_gen.add_argument("--radius", type=float, default=0.5)
    p_gen.add_argument("--length", type=float, default=1.2)
    p_gen.add_argument("--height", type=float, default=1.0)
    p_gen.add_argument("--sample-fraction", type=float, default=0.55)
    p_gen.add_argument("--points-per-frame", type=int, default=None)
    p_gen.add_argument("--noise-low", type=float, default=0.25)

    p_bench = sub.add_parser("bench", help="replay with per-frame timings, write CSV")
    p_bench.add_argument("manifest")
    _add_config_flags(p_bench)

    p_cmp = sub.add_parser(
        "compare-neighborhood",
        help="octree rings vs matched-cardinality Euclidean balls, accuracy per n",
    )
    p_cmp.add_argument("manifest")
    _add_config_flags(p_cmp)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("FAWCON_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "replay":
            run_replay(args.manifest, args)
        elif args.command == "gen":
            run_gen(args)
        elif args.command == "bench":
            run_bench(args.manifest, args)
        elif args.command == "compare-neighborhood":
            run_compare(args.manifest, args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (FrameParseError, ParamFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, FawconError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

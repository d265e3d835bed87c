"""``dt-lidar`` command line.

Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import platform
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RESERVED_VIEW, load_scene, load_sensors
from .dataset import (Dataset, DatasetManifest, frame_id, load_features, make_split,
                      write_frame, write_manifest)
from .errors import ValidationError
from .geometry import build_bvh, configure_threads
from .metrics import GapConfig, dataset_gap
from .report import load_report, write_svg
from .scene import actor_meshes, generate_labels, spawn_actors, step_actors
from .sensor import derive_scan_pattern, merge_frames, simulate_scan
from .stats import NORMALIZATION, POINT_DENSITY_UNIT, normalized_comparison, summarize

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _prepare_out(out: Path, overwrite: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise ValidationError(f"{out} is not empty; pass --overwrite to replace it")
        for name in ("points", "labels"):
            shutil.rmtree(out / name, ignore_errors=True)
        (out / "manifest.json").unlink(missing_ok=True)
    out.mkdir(parents=True, exist_ok=True)


def cmd_simulate(args) -> DatasetManifest:
    if args.frames < 1:
        raise ValidationError("--frames must be >= 1")
    if not args.dt > 0:
        raise ValidationError("--dt must be positive")
    if not 0.0 <= args.split <= 1.0:
        raise ValidationError("--split must lie in [0, 1]")
    scene = load_scene(args.scene)
    sensors = load_sensors(args.sensors)
    out = Path(args.out)
    configure_threads()

    static = scene.static_meshes()
    static_bvh = build_bvh(static) if any(m.n_triangles for m in static) else None
    templates = scene.class_templates()
    actors = spawn_actors(scene.lanes, scene.classes, scene.target_actor_count, args.seed)
    _prepare_out(out, args.overwrite)

    rays_per_tick = sum(derive_scan_pattern(spec).n_rays for spec, _ in sensors)
    ids = []
    start = time.perf_counter()
    for f in range(args.frames):
        if f > 0:
            actors = step_actors(actors, scene.lanes, args.dt)
        geometry = [static_bvh] if static_bvh is not None else []
        if actors:
            geometry.append(build_bvh(actor_meshes(actors, templates=templates)))
        fid = frame_id(f)
        frames = []
        for i, (spec, pose) in enumerate(sensors):
            frame = simulate_scan(geometry, spec, pose, f, args.seed, sensor_index=i,
                                  timestamp=f * args.dt)
            write_frame(out, fid, frame,
                        generate_labels(frame, pose, actors, scene.min_points), spec.name)
            frames.append(frame)
        if args.merge:
            merged = merge_frames(frames, [p for _, p in sensors])
            write_frame(out, fid, merged,
                        generate_labels(merged, None, actors, scene.min_points), RESERVED_VIEW)
        ids.append(fid)
    elapsed = time.perf_counter() - start

    manifest = DatasetManifest(
        name=args.name or out.resolve().name,
        frame_ids=ids,
        sensors=sensors,
        split=make_split(ids, args.split, args.seed),
        split_ratio=args.split,
        creation_seed=args.seed,
        layout="per_sensor",
        merged=args.merge,
        min_points=scene.min_points,
        dt=args.dt,
    )
    write_manifest(out, manifest)
    rate = args.frames / elapsed if elapsed > 0 else float("inf")
    print(f"simulated {args.frames} frames x {len(sensors)} sensor(s) in {elapsed:.2f} s: "
          f"{rate:.2f} frames/s, {rate * rays_per_tick / 1e6:.2f} Mrays/s")
    return manifest


def cmd_stats(args) -> dict:
    summary = summarize(Dataset(args.dataset), args.view).to_dict()
    print(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def _versions() -> dict:
    import scipy

    return {"dt_lidar": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _parse_bandwidth(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise ValidationError("--bandwidth must be 'auto' or a positive number") from None
    if not value > 0:
        raise ValidationError("--bandwidth must be positive")
    return value


def cmd_gap(args) -> dict:
    config = GapConfig(
        bandwidth=_parse_bandwidth(args.bandwidth),
        points_per_frame=args.points_per_frame,
        frame_pairs=args.frame_pairs,
        samples=args.samples,
        emd_mode=args.emd,
        seed=args.seed,
        view=args.view,
    ).validate()
    if (args.features_a is None) != (args.features_b is None):
        raise ValidationError("--features-a and --features-b must be given together")
    a = Dataset(args.a)
    b = Dataset(args.b)
    fa = load_features(args.features_a) if args.features_a else None
    fb = load_features(args.features_b) if args.features_b else None
    reports = dataset_gap(a, b, fa, fb, config)

    sa = summarize(a, config.view)
    sb = summarize(b, config.view)
    out = {space: r.to_dict() for space, r in reports.items()}
    out["stats"] = {
        "a": sa.to_dict(),
        "b": sb.to_dict(),
        "normalized": {m: list(v) for m, v in normalized_comparison(sa, sb).items()},
        "point_density_unit": POINT_DENSITY_UNIT,
        "normalization": NORMALIZATION,
    }
    out["config"] = {
        "a": args.a, "b": args.b,
        "features_a": args.features_a, "features_b": args.features_b,
        "bandwidth": config.bandwidth, "points_per_frame": config.points_per_frame,
        "frame_pairs": config.frame_pairs, "samples": config.samples,
        "emd_mode": config.emd_mode, "seed": config.seed, "view": config.view,
    }
    out["versions"] = _versions()
    path = Path(args.report)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    raw = out["raw"]
    print(f"raw: cd={raw['cd']:.6g} mmd={raw['mmd']:.6g} emd={raw['emd']:.6g} "
          f"fd={raw['fd']:.6g} -> {path}")
    return out


def cmd_report(args) -> Path:
    return write_svg(load_report(args.json), args.out)


def cmd_demo(args) -> None:
    from .demo import write_demo

    scene, sensors = write_demo(args.out)
    print(f"wrote {scene} and {sensors}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dt-lidar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate sensors over a scene into a dataset")
    s.add_argument("--scene", required=True)
    s.add_argument("--sensors", required=True)
    s.add_argument("--frames", type=int, required=True)
    s.add_argument("--dt", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--merge", action="store_true", help="also write world-frame merged frames")
    s.add_argument("--split", type=float, default=0.8, help="train fraction")
    s.add_argument("--name", default=None)
    s.add_argument("--overwrite", action="store_true")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("stats", help="frame-level statistics of a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--view", default=None)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("gap", help="distribution gap between two datasets")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--features-a")
    s.add_argument("--features-b")
    s.add_argument("--bandwidth", default="auto")
    s.add_argument("--points-per-frame", type=int, default=4096)
    s.add_argument("--frame-pairs", type=int, default=100)
    s.add_argument("--samples", type=int, default=2048,
                   help="pooled sample size for MMD and EMD")
    s.add_argument("--emd", choices=("exact", "approx"), default="exact")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--view", default=None)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_gap)

    s = sub.add_parser("report", help="render a gap report as SVG")
    s.add_argument("--json", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("demo-scene", help="write an example scene and sensor config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"dt-lidar: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"dt-lidar: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

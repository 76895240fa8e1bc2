"""Command-line entry points: simulate, count, evaluate, report.

Every command is a pure function from inputs on disk to outputs on disk;
identical inputs and configuration produce bit-identical reports. Behavior
is controlled only by flags and config files (no environment variables).
Failures print a machine-readable JSON error record to stderr and exit
nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bundle_io import BundleError, GroundTruth, read_bundle, read_json, write_bundle, write_json
from .config import PipelineConfig
from .evaluation import CountReport, error_summary, match_ground_truth
from .fruit_map import FruitletMap, PipelineStats, process_scan
from .geometry import CameraFrame
from .report import generate as generate_report_files
from .simulator import (
    NoiseSpec,
    SceneSpec,
    TrajectorySpec,
    default_intrinsics,
    generate_scene,
    plan_trajectory,
    render_scan,
)


def load_config(path: str | None) -> PipelineConfig:
    """Load a config file; a report file works too via its embedded config."""
    if path is None:
        return PipelineConfig()
    data = read_json(path)
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    return PipelineConfig.from_dict(data)


def cmd_simulate(out: str, scene: SceneSpec, trajectory: TrajectorySpec,
                 noise: NoiseSpec, scan_id: str = "scan") -> Path:
    """Generate a synthetic scan bundle with its ground-truth file."""
    scn = generate_scene(scene)
    poses = plan_trajectory(trajectory, scn)
    frames, visibility = render_scan(scn, poses, trajectory.intrinsics, noise)
    truth = GroundTruth(scn.fruitlets, visibility)
    return write_bundle(out, frames, scan_id=scan_id, ground_truth=truth)


def _count_report_dict(scan_id: str, cfg: PipelineConfig, fmap: FruitletMap,
                       stats: PipelineStats) -> dict:
    return {
        "kind": "count_report",
        "scan_id": scan_id,
        "method": cfg.fit.method_name,
        "config": cfg.to_dict(),
        "count": len(fmap.tracks),
        "stats": {
            "detections_seen": stats.detections_seen,
            "filtered_out": stats.filtered_out,
            "fit_failures": stats.fit_failures,
            "merges": stats.merges,
            "new_tracks": stats.new_tracks,
        },
        "tracks": [
            {
                "id": t.id,
                "center": [float(v) for v in t.sphere.center],
                "radius": float(t.sphere.radius),
                "observations": t.observations,
                "first_frame": t.first_frame,
                "last_frame": t.last_frame,
            }
            for t in fmap.tracks
        ],
    }


def _run_pipeline(bundle: str, cfg: PipelineConfig):
    frames, truth = read_bundle(bundle)
    scan_id = read_json(Path(bundle) / "manifest.json").get("scan_id", "scan")
    fmap, stats = process_scan(frames, cfg.extraction, cfg.fit, cfg.match)
    return scan_id, frames, truth, fmap, stats


def cmd_count(bundle: str, out: str, cfg: PipelineConfig) -> dict:
    """Count fruitlets in a bundle; write the map report to out."""
    scan_id, _, _, fmap, stats = _run_pipeline(bundle, cfg)
    report = _count_report_dict(scan_id, cfg, fmap, stats)
    write_json(out, report)
    return report


def _scored_section(tp: int, fp: int, fn: int) -> dict:
    rep = CountReport.from_matching(tp, fp, fn)
    section = {
        "ground_truth": rep.ground_truth,
        "predicted": rep.predicted,
        "tp": rep.tp, "fp": rep.fp, "fn": rep.fn,
        "precision": rep.precision, "recall": rep.recall, "f1": rep.f1,
        "percentage_error": None,
        "absolute_percentage_error": None,
    }
    if rep.ground_truth > 0:
        err = error_summary(rep.ground_truth, rep.predicted)
        section["percentage_error"] = err.percentage_error
        section["absolute_percentage_error"] = err.absolute_percentage_error
    return section


def evaluate_map(fmap: FruitletMap, truth: GroundTruth, cfg: PipelineConfig) -> dict:
    """Score a map against ground truth on both truth bases.

    'all' scores against every true fruitlet; 'visible' scores only against
    fruitlets the scan could have seen (at least min_points pixels in some
    frame), which matches how a human can verify a scan.
    """
    all_spheres = truth.spheres()
    visible_ids = truth.visible_ids(cfg.extraction.min_points)
    visible_spheres = [s for fid, s in truth.fruitlets if fid in visible_ids]
    tp_a, fp_a, fn_a = match_ground_truth(fmap, all_spheres, cfg.center_tolerance)
    tp_v, fp_v, fn_v = match_ground_truth(fmap, visible_spheres, cfg.center_tolerance)
    visible_section = _scored_section(tp_v, fp_v, fn_v)
    visible_section["min_points"] = cfg.extraction.min_points
    return {
        "center_tolerance": cfg.center_tolerance,
        "all": _scored_section(tp_a, fp_a, fn_a),
        "visible": visible_section,
        "never_visible": len(all_spheres) - len(visible_spheres),
    }


def cmd_evaluate(bundle: str, out: str, cfg: PipelineConfig) -> dict:
    """Count and score against the bundle's ground truth; write the report."""
    scan_id, _, truth, fmap, stats = _run_pipeline(bundle, cfg)
    if truth is None:
        raise BundleError(f"{bundle}: no ground-truth file; cannot evaluate")
    report = _count_report_dict(scan_id, cfg, fmap, stats)
    report["kind"] = "evaluate_report"
    report["evaluation"] = evaluate_map(fmap, truth, cfg)
    write_json(out, report)
    return report


def cmd_report(reports: list[str], out: str) -> list[Path]:
    """Render CSV tables and figures for one or more report files."""
    named = []
    for path in reports:
        data = read_json(path)
        if data.get("kind") not in ("count_report", "evaluate_report"):
            raise ValueError(f"{path}: not a count/evaluate report")
        named.append((Path(path).stem, data))
    return generate_report_files(named, out)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fruitlet-mapper",
        description="Multi-view fruitlet counting over scan bundles.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic scan bundle")
    sim.add_argument("--out", required=True, help="bundle directory to create")
    sim.add_argument("--scan-id", default="scan")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--fruitlets", type=int, default=40)
    sim.add_argument("--leaves", type=int, default=20)
    sim.add_argument("--branch-length", type=float, default=900.0)
    sim.add_argument("--radius-min", type=float, default=8.0)
    sim.add_argument("--radius-max", type=float, default=18.0)
    sim.add_argument("--leaf-size", type=float, default=60.0)
    sim.add_argument("--arc-points", type=int, default=12)
    sim.add_argument("--arcs", type=int, default=6)
    sim.add_argument("--arc-spacing", type=float, default=15.0)
    sim.add_argument("--standoff-min", type=float, default=300.0)
    sim.add_argument("--standoff-max", type=float, default=400.0)
    sim.add_argument("--width", type=int, default=640)
    sim.add_argument("--height", type=int, default=480)
    sim.add_argument("--depth-sigma", type=float, default=0.0)
    sim.add_argument("--outlier-rate", type=float, default=0.0)
    sim.add_argument("--contaminate-px", type=int, default=0)
    sim.add_argument("--frame-drop-rate", type=float, default=0.0)

    for name, help_text in (("count", "count fruitlets in a bundle"),
                            ("evaluate", "count and score against ground truth")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("bundle", help="scan bundle directory")
        cmd.add_argument("--out", required=True, help="report JSON to write")
        cmd.add_argument("--config", help="pipeline config JSON (or a prior report)")
        cmd.add_argument("--fit", choices=("ransac", "lsq"))
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--merge-threshold", type=float)
        if name == "evaluate":
            cmd.add_argument("--min-precision", type=float,
                             help="exit nonzero if visible-truth precision falls below")
            cmd.add_argument("--min-recall", type=float,
                             help="exit nonzero if visible-truth recall falls below")

    rep = sub.add_parser("report", help="render CSV and figures from reports")
    rep.add_argument("reports", nargs="+", help="count/evaluate report JSON files")
    rep.add_argument("--out", required=True, help="output directory")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "simulate":
        scene = SceneSpec(
            branch_length=args.branch_length,
            fruitlet_count=args.fruitlets,
            fruitlet_radius_range=(args.radius_min, args.radius_max),
            leaf_count=args.leaves,
            leaf_size=args.leaf_size,
            seed=args.seed,
        )
        trajectory = TrajectorySpec(
            arc_points=args.arc_points,
            arcs=args.arcs,
            arc_spacing=args.arc_spacing,
            standoff=(args.standoff_min, args.standoff_max),
            intrinsics=default_intrinsics(args.width, args.height),
        )
        noise = NoiseSpec(
            depth_sigma=args.depth_sigma,
            outlier_rate=args.outlier_rate,
            contaminate_px=args.contaminate_px,
            frame_drop_rate=args.frame_drop_rate,
            seed=args.seed,
        )
        path = cmd_simulate(args.out, scene, trajectory, noise, scan_id=args.scan_id)
        print(f"wrote bundle {path}")
        return 0

    if args.command in ("count", "evaluate"):
        cfg = load_config(args.config).with_overrides(
            method=args.fit, seed=args.seed, merge_threshold=args.merge_threshold)
        if args.command == "count":
            report = cmd_count(args.bundle, args.out, cfg)
            print(f"counted {report['count']} fruitlets -> {args.out}")
            return 0
        report = cmd_evaluate(args.bundle, args.out, cfg)
        visible = report["evaluation"]["visible"]
        print(f"count {report['count']} vs visible truth {visible['ground_truth']} "
              f"(tp {visible['tp']}, fp {visible['fp']}, fn {visible['fn']}) -> {args.out}")
        failures = []
        if args.min_precision is not None and (
                visible["precision"] is None or visible["precision"] < args.min_precision):
            failures.append(f"precision {visible['precision']} < {args.min_precision}")
        if args.min_recall is not None and (
                visible["recall"] is None or visible["recall"] < args.min_recall):
            failures.append(f"recall {visible['recall']} < {args.min_recall}")
        if failures:
            raise SystemExit("threshold check failed: " + "; ".join(failures))
        return 0

    if args.command == "report":
        written = cmd_report(args.reports, args.out)
        print(f"wrote {len(written)} files to {args.out}")
        return 0

    raise ValueError(f"unknown command {args.command}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            json.dump({"error": exc.code, "type": "ThresholdViolation"},
                      sys.stderr, sort_keys=True)
            sys.stderr.write("\n")
            return 1
        raise
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        json.dump({"error": str(exc), "type": type(exc).__name__},
                  sys.stderr, sort_keys=True)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

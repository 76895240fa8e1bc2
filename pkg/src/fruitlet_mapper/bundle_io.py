"""Scan-bundle file formats.

A bundle is a directory:

    manifest.json           scan id, frame count, shared intrinsics, units
    frames/depth_NNNN.depth raw depth raster (text header + float32-le data)
    frames/mask_NNNN.pgm    16-bit binary PGM; instance metadata in comments
    frames/pose_NNNN.txt    camera-to-world 4x4, row-major decimal text
    ground_truth.json       optional: true spheres + per-frame visibility

Depth rasters carry a three-line text header (magic+version, "width height",
invalid sentinel) followed by row-major little-endian float32 samples, so a
write-then-read round trip is bit-exact. Poses use repr() decimals, which
round-trip float64 exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    CameraFrame,
    CameraIntrinsics,
    DepthImage,
    InstanceInfo,
    MaskImage,
    RigidTransform,
)
from .sphere_fit import Sphere

_DEPTH_MAGIC = "fruitdepth 1"
_UNITS = "mm"


class BundleError(Exception):
    """A bundle file is missing, malformed, or inconsistent."""


@dataclass
class GroundTruth:
    """True fruitlet spheres plus per-frame visible-pixel counts."""

    fruitlets: list[tuple[int, Sphere]]
    visibility: dict[int, dict[int, int]]

    def spheres(self) -> list[Sphere]:
        return [s for _, s in self.fruitlets]

    def visible_ids(self, min_points: int) -> set[int]:
        """Fruitlets with at least min_points visible pixels in some frame."""
        return {fid for fid, per_frame in self.visibility.items()
                if any(c >= min_points for c in per_frame.values())}


# ---------------------------------------------------------------- depth ----

def write_depth(path: Path, depth: DepthImage) -> None:
    header = (f"{_DEPTH_MAGIC}\n{depth.width} {depth.height}\n"
              f"{float(depth.invalid_value)!r}\n")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(depth.values, dtype="<f4").tobytes())


def read_depth(path: Path) -> DepthImage:
    with open(path, "rb") as f:
        magic = f.readline().decode("ascii", "replace").strip()
        if magic != _DEPTH_MAGIC:
            raise BundleError(f"{path}: bad depth magic {magic!r}")
        try:
            w, h = map(int, f.readline().split())
            invalid = float(f.readline())
        except ValueError as exc:
            raise BundleError(f"{path}: malformed depth header") from exc
        data = f.read()
    expected = w * h * 4
    if len(data) != expected:
        raise BundleError(f"{path}: truncated depth data "
                          f"({len(data)} bytes, expected {expected})")
    values = np.frombuffer(data, dtype="<f4").reshape(h, w)
    return DepthImage(values.copy(), invalid)


# ---------------------------------------------------------------- masks ----

def write_mask(path: Path, mask: MaskImage) -> None:
    lines = ["P5"]
    for label in sorted(mask.instances):
        info = mask.instances[label]
        source = "-" if info.source_id is None else str(info.source_id)
        lines.append(f"# instance {label} {info.class_tag} {float(info.score)!r} {source}")
    lines.append(f"{mask.width} {mask.height}")
    lines.append("65535")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(np.ascontiguousarray(mask.labels, dtype=">u2").tobytes())


def read_mask(path: Path) -> MaskImage:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise BundleError(f"{path}: not a binary PGM")
        instances: dict[int, InstanceInfo] = {}
        line = f.readline()
        while line.startswith(b"#"):
            parts = line.decode("ascii").split()
            if len(parts) == 6 and parts[1] == "instance":
                source = None if parts[5] == "-" else int(parts[5])
                instances[int(parts[2])] = InstanceInfo(parts[3], float(parts[4]), source)
            line = f.readline()
        try:
            w, h = map(int, line.split())
            maxval = int(f.readline())
        except ValueError as exc:
            raise BundleError(f"{path}: malformed PGM header") from exc
        if maxval != 65535:
            raise BundleError(f"{path}: expected 16-bit PGM, maxval {maxval}")
        data = f.read()
    expected = w * h * 2
    if len(data) != expected:
        raise BundleError(f"{path}: truncated mask data "
                          f"({len(data)} bytes, expected {expected})")
    labels = np.frombuffer(data, dtype=">u2").reshape(h, w)
    return MaskImage(labels.astype(np.uint16), instances)


# ---------------------------------------------------------------- poses ----

def write_pose(path: Path, pose: RigidTransform) -> None:
    rows = pose.as_matrix()
    text = "\n".join(" ".join(repr(float(v)) for v in row) for row in rows)
    path.write_text(text + "\n", encoding="ascii")


def read_pose(path: Path) -> RigidTransform:
    rows = []
    for line in path.read_text(encoding="ascii").splitlines():
        if line.strip():
            rows.append([float(v) for v in line.split()])
    m = np.array(rows)
    if m.shape != (4, 4):
        raise BundleError(f"{path}: pose must be a 4x4 matrix, got {m.shape}")
    try:
        return RigidTransform.from_matrix(m)
    except ValueError as exc:
        raise BundleError(f"{path}: {exc}") from exc


# --------------------------------------------------------------- bundle ----

def write_bundle(path, frames: list[CameraFrame], scan_id: str = "scan",
                 ground_truth: GroundTruth | None = None) -> Path:
    if not frames:
        raise ValueError("cannot write an empty bundle")
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    intr = frames[0].intrinsics
    entries = []
    for frame in frames:
        if frame.intrinsics != intr:
            raise ValueError("all frames in a bundle must share intrinsics")
        names = {kind: f"frames/{kind}_{frame.frame_id:04d}{ext}"
                 for kind, ext in (("depth", ".depth"), ("mask", ".pgm"), ("pose", ".txt"))}
        write_depth(root / names["depth"], frame.depth)
        write_mask(root / names["mask"], frame.masks)
        write_pose(root / names["pose"], frame.pose)
        entries.append({"frame_id": frame.frame_id, **names})
    manifest = {
        "scan_id": scan_id,
        "units": _UNITS,
        "frame_count": len(frames),
        "intrinsics": {
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height,
        },
        "frames": entries,
        "ground_truth": "ground_truth.json" if ground_truth is not None else None,
    }
    write_json(root / "manifest.json", manifest)
    if ground_truth is not None:
        write_json(root / "ground_truth.json", {
            "fruitlets": [
                {
                    "id": fid,
                    "center": [float(v) for v in sphere.center],
                    "radius": float(sphere.radius),
                    "visible_pixels": {
                        str(f): int(c)
                        for f, c in sorted(ground_truth.visibility.get(fid, {}).items())
                    },
                }
                for fid, sphere in ground_truth.fruitlets
            ],
        })
    return root


def read_bundle(path) -> tuple[list[CameraFrame], GroundTruth | None]:
    """Load and validate a bundle; frames come back ordered by frame_id.

    Every failure names the offending frame or file.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise BundleError(f"{root}: manifest.json not found")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if manifest.get("units") != _UNITS:
        raise BundleError(f"{root}: units {manifest.get('units')!r}, expected '{_UNITS}'")
    try:
        i = manifest["intrinsics"]
        intr = CameraIntrinsics(i["fx"], i["fy"], i["cx"], i["cy"], i["width"], i["height"])
        entries = manifest["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"{root}: malformed manifest ({exc})") from exc
    if len(entries) != manifest.get("frame_count"):
        raise BundleError(f"{root}: manifest frame_count {manifest.get('frame_count')} "
                          f"does not match {len(entries)} frame entries")

    frames = []
    for entry in sorted(entries, key=lambda e: e["frame_id"]):
        fid = entry["frame_id"]
        paths = {kind: root / entry[kind] for kind in ("depth", "mask", "pose")}
        for kind, p in paths.items():
            if not p.is_file():
                raise BundleError(f"frame {fid}: missing {kind} file {p}")
        try:
            depth = read_depth(paths["depth"])
            mask = read_mask(paths["mask"])
            pose = read_pose(paths["pose"])
        except BundleError as exc:
            raise BundleError(f"frame {fid}: {exc}") from exc
        if (depth.height, depth.width) != (intr.height, intr.width):
            raise BundleError(f"frame {fid}: depth is {depth.width}x{depth.height}, "
                              f"manifest says {intr.width}x{intr.height}")
        if (mask.height, mask.width) != (depth.height, depth.width):
            raise BundleError(f"frame {fid}: mask and depth dimensions differ")
        if not np.all(np.isfinite(depth.values)):
            raise BundleError(f"frame {fid}: depth contains non-finite values")
        frames.append(CameraFrame(fid, intr, pose, depth, mask))

    ids = [f.frame_id for f in frames]
    if len(set(ids)) != len(ids):
        raise BundleError(f"{root}: duplicate frame ids")

    truth = None
    gt_name = manifest.get("ground_truth")
    if gt_name:
        gt_path = root / gt_name
        if not gt_path.is_file():
            raise BundleError(f"{root}: ground truth file {gt_name} missing")
        raw = json.loads(gt_path.read_text(encoding="utf-8"))
        fruitlets = []
        visibility = {}
        for rec in raw["fruitlets"]:
            fid = int(rec["id"])
            fruitlets.append((fid, Sphere(np.array(rec["center"]), rec["radius"])))
            visibility[fid] = {int(k): int(v) for k, v in rec["visible_pixels"].items()}
        truth = GroundTruth(fruitlets, visibility)
    return frames, truth


def write_json(path: Path, payload: dict) -> None:
    """Deterministic JSON: sorted keys, fixed layout, trailing newline."""
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))

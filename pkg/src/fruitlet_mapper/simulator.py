"""Synthetic branch scans with exact ground truth.

The scene model is deliberately minimal: fruitlets are spheres clustered
along a straight branch, leaves are planar discs between the branch and the
camera side, and the branch itself is a finite cylinder that renders depth
but no instance label. Frames are produced by analytic per-pixel ray
casting against these primitives with a depth buffer, so a rendered frame
backprojects exactly onto the generating geometry.

World layout: the branch axis runs along +x from the origin, +z is up, and
cameras sit on the -y side looking toward the branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    FRUITLET,
    CameraFrame,
    CameraIntrinsics,
    DepthImage,
    InstanceInfo,
    MaskImage,
    RigidTransform,
)
from .sphere_fit import Sphere

_NEAR_CLIP = 1.0  # mm; hits closer than this are ignored


class SceneGenerationError(Exception):
    """Non-interpenetration could not be satisfied within bounded retries."""


@dataclass
class SceneSpec:
    branch_length: float = 900.0
    fruitlet_count: int = 40
    cluster_size_range: tuple[int, int] = (1, 5)
    fruitlet_radius_range: tuple[float, float] = (8.0, 18.0)
    leaf_count: int = 20
    leaf_size: float = 60.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.cluster_size_range
        if not 1 <= lo <= hi <= 5:
            raise ValueError("cluster sizes must lie within 1..5")
        r_lo, r_hi = self.fruitlet_radius_range
        if not 0 < r_lo <= r_hi:
            raise ValueError("fruitlet radius range must be positive")
        if self.branch_length <= 0 or self.leaf_size <= 0:
            raise ValueError("branch_length and leaf_size must be positive")


@dataclass
class Disc:
    """Planar circular occluder."""

    center: np.ndarray
    normal: np.ndarray
    radius: float


@dataclass
class Scene:
    fruitlets: list[tuple[int, Sphere]]
    leaves: list[Disc]
    branch_axis: tuple[np.ndarray, np.ndarray]
    branch_radius: float = 10.0
    # Ground-truth ids grouped by the cluster they were generated in.
    clusters: list[list[int]] = field(default_factory=list)


@dataclass
class TrajectorySpec:
    """Arc-scan plan: arcs x arc_points camera poses aimed at the branch."""

    arc_points: int = 12
    arcs: int = 6
    arc_spacing: float = 15.0
    standoff: tuple[float, float] = (300.0, 400.0)
    intrinsics: CameraIntrinsics = None
    arc_span_deg: float = 100.0

    def __post_init__(self):
        if self.arc_points < 1 or self.arcs < 1:
            raise ValueError("arc_points and arcs must be >= 1")
        lo, hi = self.standoff
        if not 0 < lo <= hi:
            raise ValueError("standoff range must be positive")
        if self.intrinsics is None:
            self.intrinsics = default_intrinsics()


@dataclass
class NoiseSpec:
    """Degradations applied after rendering; all off by default."""

    depth_sigma: float = 0.0
    outlier_rate: float = 0.0
    contaminate_px: int = 0
    frame_drop_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError("outlier_rate must be in [0, 1]")
        if not 0.0 <= self.frame_drop_rate < 1.0:
            raise ValueError("frame_drop_rate must be in [0, 1)")
        if self.depth_sigma < 0 or self.contaminate_px < 0:
            raise ValueError("depth_sigma and contaminate_px must be >= 0")


def default_intrinsics(width: int = 640, height: int = 480) -> CameraIntrinsics:
    # Focal length keeps the angular resolution of the full-resolution rig
    # (8 mm lens on a 1.1" sensor) after downscaling.
    f = 0.58 * width
    return CameraIntrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def generate_scene(spec: SceneSpec) -> Scene:
    """Place clustered fruitlets and leaf discs along the branch, seeded.

    Fruitlet spheres keep pairwise center distance >= 0.7 * (r1 + r2), i.e.
    they never interpenetrate beyond 30% of their joint radius, and stay
    clear of the branch cylinder. Placement that cannot satisfy this within
    bounded retries raises SceneGenerationError.
    """
    rng = np.random.default_rng(spec.seed)
    branch_start = np.zeros(3)
    branch_end = np.array([spec.branch_length, 0.0, 0.0])
    branch_radius = 10.0

    fruitlets: list[tuple[int, Sphere]] = []
    spheres: list[Sphere] = []
    clusters: list[list[int]] = []
    next_id = 0
    while next_id < spec.fruitlet_count:
        size = int(rng.integers(spec.cluster_size_range[0], spec.cluster_size_range[1] + 1))
        size = min(size, spec.fruitlet_count - next_id)
        placed = _place_cluster(rng, spec, size, spheres, branch_radius)
        if placed is None:
            raise SceneGenerationError(
                f"could not place a {size}-fruitlet cluster without interpenetration "
                f"(placed {next_id} of {spec.fruitlet_count})")
        cluster_ids = []
        for sphere in placed:
            fruitlets.append((next_id, sphere))
            spheres.append(sphere)
            cluster_ids.append(next_id)
            next_id += 1
        clusters.append(cluster_ids)

    leaves = []
    for _ in range(spec.leaf_count):
        center = np.array([
            rng.uniform(0.0, spec.branch_length),
            rng.uniform(-150.0, -30.0),
            rng.uniform(-80.0, 80.0),
        ])
        normal = rng.normal(size=3)
        normal /= np.linalg.norm(normal)
        leaves.append(Disc(center, normal, spec.leaf_size / 2.0))

    return Scene(fruitlets, leaves, (branch_start, branch_end), branch_radius, clusters)


def _place_cluster(rng, spec: SceneSpec, size: int, existing: list[Sphere],
                   branch_radius: float) -> list[Sphere] | None:
    """Try whole-cluster placements until one satisfies the separation rules."""
    for _cluster_attempt in range(100):
        along = rng.uniform(0.0, spec.branch_length)
        phi = rng.uniform(0.0, 2.0 * np.pi)
        spur = rng.uniform(20.0, 50.0)
        cluster_center = np.array([along, spur * np.cos(phi), spur * np.sin(phi)])
        candidate: list[Sphere] = []
        for _ in range(size):
            for _attempt in range(100):
                radius = rng.uniform(*spec.fruitlet_radius_range)
                direction = rng.normal(size=3)
                direction /= np.linalg.norm(direction)
                center = cluster_center + direction * rng.uniform(0.0, 2.0 * radius)
                if np.hypot(center[1], center[2]) < branch_radius + 0.5 * radius:
                    continue
                if all(np.linalg.norm(center - s.center) >= 0.7 * (radius + s.radius)
                       for s in existing + candidate):
                    candidate.append(Sphere(center, radius))
                    break
            else:
                break  # this member failed; retry the whole cluster elsewhere
        if len(candidate) == size:
            return candidate
    return None


def plan_trajectory(spec: TrajectorySpec, scene: Scene) -> list[RigidTransform]:
    """Camera-to-world poses on arcs around the branch axis.

    Arcs are centered on the middle of the branch and offset along it by
    arc_spacing; every camera aims at the arc's point on the axis, with the
    image x axis aligned to the branch. Standoff ramps linearly across each
    arc within the configured range.
    """
    start, end = scene.branch_axis
    axis = end - start
    length = float(np.linalg.norm(axis))
    axis = axis / length
    up = np.array([0.0, 0.0, 1.0])
    side = np.cross(axis, up)
    side_norm = np.linalg.norm(side)
    if side_norm < 1e-9:
        raise ValueError("branch axis must not be vertical")
    side /= side_norm

    span = np.deg2rad(spec.arc_span_deg)
    s_lo, s_hi = spec.standoff
    poses = []
    for a in range(spec.arcs):
        along = length / 2.0 + (a - (spec.arcs - 1) / 2.0) * spec.arc_spacing
        target = start + axis * np.clip(along, 0.0, length)
        for j in range(spec.arc_points):
            if spec.arc_points == 1:
                theta, ramp = 0.0, 0.5
            else:
                ramp = j / (spec.arc_points - 1)
                theta = -span / 2.0 + span * ramp
            standoff = s_lo + (s_hi - s_lo) * ramp
            radial = np.cos(theta) * side + np.sin(theta) * up
            position = target + standoff * radial
            z_cam = -radial
            x_cam = axis
            y_cam = np.cross(z_cam, x_cam)
            rotation = np.column_stack((x_cam, y_cam, z_cam))
            poses.append(RigidTransform(rotation, position))
    return poses


def render_frame(scene: Scene, pose: RigidTransform, intrinsics: CameraIntrinsics,
                 frame_id: int = 0) -> CameraFrame:
    """Ray-cast the scene into a depth + instance-mask frame.

    Rays go through pixel centers; the stored depth is the camera-frame z
    of the nearest hit, so backprojection reproduces hit points exactly.
    Leaves and the branch write depth only (label 0). Per-frame instance
    labels are contiguous 1..K in ascending ground-truth id order, with the
    ground-truth id kept as the instance's source_id.
    """
    w, h = intrinsics.width, intrinsics.height
    dx = (np.arange(w) - intrinsics.cx) / intrinsics.fx
    dy = (np.arange(h) - intrinsics.cy) / intrinsics.fy
    r = pose.rotation
    # World-frame, unnormalized ray directions; the ray parameter equals z-depth.
    dirs = (dx[None, :, None] * r[:, 0]
            + dy[:, None, None] * r[:, 1]
            + r[:, 2])
    origin = pose.translation
    depth = np.full((h, w), np.inf)
    raw_labels = np.zeros((h, w), dtype=np.int64)
    cam_from_world = pose.inverse()

    def window(center: np.ndarray, radius: float):
        """Clipped pixel window covering a sphere of influence, or None."""
        c_cam = cam_from_world.apply(center)
        z = c_cam[2]
        if z - radius < _NEAR_CLIP:
            return (0, h, 0, w) if z + radius > _NEAR_CLIP else None
        u0, v0 = intrinsics.project(c_cam)[0]
        ru = intrinsics.fx * radius / (z - radius) + 2.0
        rv = intrinsics.fy * radius / (z - radius) + 2.0
        ua, ub = int(np.floor(u0 - ru)), int(np.ceil(u0 + ru)) + 1
        va, vb = int(np.floor(v0 - rv)), int(np.ceil(v0 + rv)) + 1
        ua, ub = max(ua, 0), min(ub, w)
        va, vb = max(va, 0), min(vb, h)
        if ua >= ub or va >= vb:
            return None
        return va, vb, ua, ub

    def write(va, vb, ua, ub, s, hit, label):
        buf = depth[va:vb, ua:ub]
        closer = hit & (s < buf)
        buf[closer] = s[closer]
        raw_labels[va:vb, ua:ub][closer] = label

    # Branch cylinder: depth only, full image.
    a0, a1 = scene.branch_axis
    axis = a1 - a0
    axis_len = float(np.linalg.norm(axis))
    axis = axis / axis_len
    oc = origin - a0
    d_par = dirs @ axis
    d_perp = dirs - d_par[..., None] * axis
    oc_par = oc @ axis
    oc_perp = oc - oc_par * axis
    qa = (d_perp * d_perp).sum(axis=-1)
    qb = 2.0 * (d_perp @ oc_perp)
    qc = oc_perp @ oc_perp - scene.branch_radius ** 2
    disc = qb * qb - 4.0 * qa * qc
    solvable = (disc >= 0.0) & (qa > 1e-12)
    s = np.where(solvable, (-qb - np.sqrt(np.where(solvable, disc, 0.0)))
                 / np.where(solvable, 2.0 * qa, 1.0), np.inf)
    axial = oc_par + np.where(solvable, s, 0.0) * d_par
    write(0, h, 0, w, s, solvable & (s > _NEAR_CLIP) & (axial >= 0.0) & (axial <= axis_len), 0)

    # Leaf discs: depth only.
    for leaf in scene.leaves:
        win = window(leaf.center, leaf.radius)
        if win is None:
            continue
        va, vb, ua, ub = win
        d = dirs[va:vb, ua:ub]
        denom = d @ leaf.normal
        safe = np.abs(denom) > 1e-12
        s = np.where(safe, ((leaf.center - origin) @ leaf.normal)
                     / np.where(safe, denom, 1.0), np.inf)
        p = origin + s[..., None] * d
        inside = ((p - leaf.center) ** 2).sum(axis=-1) <= leaf.radius ** 2
        write(va, vb, ua, ub, s, safe & (s > _NEAR_CLIP) & inside, 0)

    # Fruitlet spheres: depth + label (ground-truth id + 1 until relabeling).
    for gt_id, sphere in scene.fruitlets:
        win = window(sphere.center, sphere.radius)
        if win is None:
            continue
        va, vb, ua, ub = win
        d = dirs[va:vb, ua:ub]
        oc = origin - sphere.center
        qa = (d * d).sum(axis=-1)
        qb = 2.0 * (d @ oc)
        qc = oc @ oc - sphere.radius ** 2
        disc = qb * qb - 4.0 * qa * qc
        ok = disc >= 0.0
        s = np.where(ok, (-qb - np.sqrt(np.where(ok, disc, 0.0))) / (2.0 * qa), np.inf)
        write(va, vb, ua, ub, s, ok & (s > _NEAR_CLIP), gt_id + 1)

    depth_img = np.where(np.isfinite(depth), depth, 0.0).astype(np.float32)
    present = np.unique(raw_labels)
    present = present[present > 0]
    labels = np.zeros((h, w), dtype=np.uint16)
    instances: dict[int, InstanceInfo] = {}
    for new_label, raw in enumerate(present, start=1):
        labels[raw_labels == raw] = new_label
        instances[new_label] = InstanceInfo(FRUITLET, 1.0, source_id=int(raw - 1))
    return CameraFrame(
        frame_id=frame_id,
        intrinsics=intrinsics,
        pose=pose,
        depth=DepthImage(depth_img),
        masks=MaskImage(labels, instances),
    )


def add_noise(frame: CameraFrame, depth_sigma: float, outlier_rate: float,
              seed: int) -> CameraFrame:
    """Gaussian depth noise plus uniform-depth outliers; masks untouched.

    Outliers replace the chosen fraction of valid pixels with a uniform
    draw over the frame's valid depth range. Perturbed depths that fall to
    or below zero become invalid.
    """
    rng = np.random.default_rng(seed)
    values = frame.depth.values.copy()
    valid = frame.depth.valid
    n_valid = int(valid.sum())
    if n_valid:
        if depth_sigma > 0.0:
            values[valid] += rng.normal(0.0, depth_sigma, n_valid).astype(np.float32)
        if outlier_rate > 0.0:
            lo = float(frame.depth.values[valid].min())
            hi = float(frame.depth.values[valid].max())
            k = int(round(outlier_rate * n_valid))
            if k:
                flat = np.flatnonzero(valid.ravel())
                chosen = rng.choice(flat, size=k, replace=False)
                values.ravel()[chosen] = rng.uniform(lo, hi, k).astype(np.float32)
        values[valid & (values <= frame.depth.invalid_value)] = frame.depth.invalid_value
    return CameraFrame(frame.frame_id, frame.intrinsics, frame.pose,
                       DepthImage(values, frame.depth.invalid_value), frame.masks)


def contaminate_masks(frame: CameraFrame, pixels: int) -> CameraFrame:
    """Dilate instance masks across occluder boundaries.

    Emulates imprecise detections whose masks spill onto the leaf or branch
    in front: each instance grows by the given number of pixels into
    background pixels that carry valid depth. Lower labels take precedence.
    Deterministic; depth is untouched.
    """
    if pixels <= 0:
        return frame
    labels = frame.masks.labels.copy()
    takeable = (labels == 0) & frame.depth.valid
    for label in sorted(frame.masks.instances):
        grown = _dilate(frame.masks.labels == label, pixels) & takeable
        labels[grown] = label
        takeable &= ~grown
    return CameraFrame(frame.frame_id, frame.intrinsics, frame.pose, frame.depth,
                       MaskImage(labels, dict(frame.masks.instances)))


def _dilate(mask: np.ndarray, steps: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(steps):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def render_scan(scene: Scene, poses: list[RigidTransform], intrinsics: CameraIntrinsics,
                noise: NoiseSpec | None = None,
                ) -> tuple[list[CameraFrame], dict[int, dict[int, int]]]:
    """Render all poses and report per-fruitlet visibility.

    The visibility report maps ground-truth fruitlet id to its visible
    pixel count per rendered frame, measured before any mask contamination
    or depth noise. Frame drops keep original frame ids (gaps allowed); at
    least one frame always survives.
    """
    noise = noise or NoiseSpec()
    rng = np.random.default_rng(noise.seed)
    keep = rng.random(len(poses)) >= noise.frame_drop_rate
    if not keep.any():
        keep[0] = True
    frames = []
    visibility: dict[int, dict[int, int]] = {gt_id: {} for gt_id, _ in scene.fruitlets}
    for frame_id, pose in enumerate(poses):
        if not keep[frame_id]:
            continue
        frame = render_frame(scene, pose, intrinsics, frame_id)
        for label, info in frame.masks.instances.items():
            visibility[info.source_id][frame_id] = frame.masks.pixel_count(label)
        if noise.contaminate_px:
            frame = contaminate_masks(frame, noise.contaminate_px)
        if noise.depth_sigma > 0.0 or noise.outlier_rate > 0.0:
            frame_seed = int(np.random.SeedSequence(
                entropy=(noise.seed, frame_id)).generate_state(1)[0])
            frame = add_noise(frame, noise.depth_sigma, noise.outlier_rate, frame_seed)
        frames.append(frame)
    return frames, visibility

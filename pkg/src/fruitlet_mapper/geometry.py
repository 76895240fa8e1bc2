"""Core 3D types and the camera model.

Conventions used throughout the package:

  * All lengths are in millimetres.
  * Points are float64 arrays of shape (3,); point clouds are (N, 3).
  * Camera frame is the standard computer-vision frame: x right, y down,
    z forward along the optical axis.
  * Pixel (u, v) addresses column u, row v; the pixel centre sits exactly
    at (u, v) in pixel coordinates.
  * Poses are camera-to-world transforms: p_world = R @ p_cam + t.
  * Depth images store metric z-depth (not ray length); a non-positive
    value marks a missing measurement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Class tags an instance mask may carry; only fruitlets are counted.
FRUITLET = "fruitlet"
CALYX = "calyx"
STEM = "stem"

CAMERA_FRAME = "camera"
WORLD_FRAME = "world"

_ORTHONORMALITY_TOL = 1e-6


def as_point(p) -> np.ndarray:
    """Coerce to a float64 (3,) point, rejecting non-finite input."""
    a = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite point: {a}")
    return a


@dataclass
class RigidTransform:
    """Rigid motion: rotation (3x3, orthonormal, det +1) plus translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = as_point(self.translation)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        det = np.linalg.det(self.rotation)
        if err > _ORTHONORMALITY_TOL or abs(det - 1.0) > _ORTHONORMALITY_TOL:
            raise ValueError(
                f"rotation is not orthonormal with det +1 "
                f"(orthonormality error {err:.2e}, det {det:.9f})"
            )

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (3,) or (N, 3) through p' = R @ p + t."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition such that compose(a, b).apply(p) == a.apply(b.apply(p))."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


@dataclass
class CameraIntrinsics:
    """Pinhole intrinsics; fx/fy/cx/cy in pixels, image size in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-frame points (N, 3) to pixel coordinates (N, 2)."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        z = pts[:, 2]
        return np.column_stack((pts[:, 0] * self.fx / z + self.cx,
                                pts[:, 1] * self.fy / z + self.cy))

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics for the same camera resampled to a new image size."""
        sx, sy = width / self.width, height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy,
                                self.cx * sx, self.cy * sy, width, height)


@dataclass
class DepthImage:
    """Per-pixel metric depth in mm; values <= invalid_value mark missing depth."""

    values: np.ndarray
    invalid_value: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("depth image must be 2-D")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of pixels carrying a usable depth measurement."""
        return np.isfinite(self.values) & (self.values > self.invalid_value)


@dataclass
class InstanceInfo:
    """Per-instance detection metadata.

    source_id is provenance for synthetic data (the ground-truth object id a
    simulator assigned to this instance); it is None for real detections and
    ignored by the pipeline.
    """

    class_tag: str
    score: float
    source_id: int | None = None


@dataclass
class MaskImage:
    """Instance label raster: 0 = background, k > 0 = instance k."""

    labels: np.ndarray
    instances: dict[int, InstanceInfo] = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint16)
        if self.labels.ndim != 2:
            raise ValueError("mask image must be 2-D")
        present = set(np.unique(self.labels).tolist()) - {0}
        declared = set(self.instances)
        if not present <= declared:
            raise ValueError(f"labels {sorted(present - declared)} lack instance metadata")
        if declared and sorted(declared) != list(range(1, max(declared) + 1)):
            raise ValueError("instance labels must form a contiguous set 1..K")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def pixel_count(self, instance: int) -> int:
        return int(np.count_nonzero(self.labels == instance))


@dataclass
class CameraFrame:
    """One viewpoint: intrinsics, camera-to-world pose, depth, instance masks."""

    frame_id: int
    intrinsics: CameraIntrinsics
    pose: RigidTransform
    depth: DepthImage
    masks: MaskImage

    def __post_init__(self):
        if (self.depth.height, self.depth.width) != (self.masks.height, self.masks.width):
            raise ValueError("depth and mask dimensions differ")
        if (self.depth.height, self.depth.width) != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("image dimensions do not match intrinsics")


@dataclass
class PointCloud:
    """Ordered 3D points tagged with their coordinate frame."""

    points: np.ndarray
    frame: str = CAMERA_FRAME

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite points")
        if self.frame not in (CAMERA_FRAME, WORLD_FRAME):
            raise ValueError(f"unknown frame tag {self.frame!r}")

    def __len__(self) -> int:
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        if len(self) == 0:
            raise ValueError("empty cloud has no centroid")
        return self.points.mean(axis=0)


def backproject(depth: DepthImage, intrinsics: CameraIntrinsics,
                mask: MaskImage, instance: int) -> PointCloud:
    """Lift one instance's masked pixels with valid depth into a camera-frame cloud.

    Pinhole model per pixel (u, v) with depth z:
        X = (u - cx) * z / fx,  Y = (v - cy) * z / fy,  Z = z.
    Pixels without a valid depth are skipped. Output preserves row-major
    pixel order.
    """
    if (depth.height, depth.width) != (mask.height, mask.width):
        raise ValueError("depth and mask dimensions differ")
    if instance not in mask.instances:
        raise ValueError(f"unknown instance label {instance}")
    select = (mask.labels == instance) & depth.valid
    v, u = np.nonzero(select)
    z = depth.values[v, u].astype(np.float64)
    x = (u - intrinsics.cx) * z / intrinsics.fx
    y = (v - intrinsics.cy) * z / intrinsics.fy
    return PointCloud(np.column_stack((x, y, z)), CAMERA_FRAME)


def to_world(cloud: PointCloud, pose: RigidTransform) -> PointCloud:
    """Map a camera-frame cloud to the world frame via the camera-to-world pose."""
    if cloud.frame != CAMERA_FRAME:
        raise ValueError("cloud is already world-frame (double transform?)")
    return PointCloud(pose.apply(cloud.points), WORLD_FRAME)

"""Per-frame detection cleanup: thresholding and occlusion splitting.

Small or low-confidence instances are dropped before any fitting; clouds
contaminated by a foreground occluder are split with a deterministic
two-cluster k-means and reduced to the cluster most likely to be the fruit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import FRUITLET, CameraFrame, PointCloud, backproject, to_world


@dataclass
class FruitletObservation:
    """One detection's world-frame cloud with provenance.

    camera_center is the translation of the producing frame's pose, kept so
    later stages can reason about the viewing direction.
    """

    frame_id: int
    instance: int
    cloud: PointCloud
    camera_center: np.ndarray
    score: float


@dataclass
class ExtractionConfig:
    min_points: int = 50
    score_threshold: float = 0.5
    occlusion_split_enabled: bool = True
    cluster_separation_mm: float = 25.0

    def __post_init__(self):
        if self.min_points < 4:
            raise ValueError("min_points must be >= 4 (a sphere needs 4 points)")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must be in [0, 1]")
        if self.cluster_separation_mm <= 0:
            raise ValueError("cluster_separation_mm must be positive")


def filter_instances(frame: CameraFrame, cfg: ExtractionConfig) -> list[FruitletObservation]:
    """Turn a frame's fruitlet-class instances into world-frame observations.

    Calyx/stem instances are ignored; so are instances below the score
    threshold or with fewer than min_points valid backprojected pixels.
    """
    out = []
    for label in sorted(frame.masks.instances):
        info = frame.masks.instances[label]
        if info.class_tag != FRUITLET or info.score < cfg.score_threshold:
            continue
        cloud = backproject(frame.depth, frame.intrinsics, frame.masks, label)
        if len(cloud) < cfg.min_points:
            continue
        out.append(FruitletObservation(
            frame_id=frame.frame_id,
            instance=label,
            cloud=to_world(cloud, frame.pose),
            camera_center=frame.pose.translation.copy(),
            score=info.score,
        ))
    return out


def split_occlusion(obs: FruitletObservation, cfg: ExtractionConfig) -> FruitletObservation:
    """Strip a contaminating occluder cluster from an observation's cloud.

    Runs k-means with k=2 (farthest-pair initialization, 20-iteration cap,
    no RNG). The split is accepted only when the cluster centroids separate
    by more than cluster_separation_mm; the larger cluster (by point count)
    then replaces the cloud. Equal-size ties keep the cluster whose centroid
    is nearer the camera ray through the mask centroid, realized as the mean
    unit viewing direction over the cloud's points (exact ties keep the
    first cluster).
    """
    pts = obs.cloud.points
    if not cfg.occlusion_split_enabled or len(pts) < 2 * cfg.min_points:
        return obs
    i, j = _farthest_pair(pts)
    split = _two_means(pts, pts[i], pts[j])
    if split is None:
        return obs
    in_second, c_first, c_second = split
    if np.linalg.norm(c_first - c_second) <= cfg.cluster_separation_mm:
        return obs
    n_second = int(in_second.sum())
    n_first = len(pts) - n_second
    if n_first != n_second:
        keep = ~in_second if n_first > n_second else in_second
    else:
        ray_dir = _mean_view_direction(pts, obs.camera_center)
        if ray_dir is None:
            keep = ~in_second
        else:
            keep = ~in_second if (_ray_distance(c_first, obs.camera_center, ray_dir)
                                  <= _ray_distance(c_second, obs.camera_center, ray_dir)) \
                else in_second
    return replace(obs, cloud=PointCloud(pts[keep], obs.cloud.frame))


def _mean_view_direction(pts: np.ndarray, camera_center: np.ndarray) -> np.ndarray | None:
    """Mean unit direction camera -> point: the chief ray of the detection.

    Averaging unit directions (rather than 3D points) reproduces the ray
    through the 2D mask centroid irrespective of per-pixel depth.
    """
    rel = pts - camera_center
    norms = np.linalg.norm(rel, axis=1)
    ok = norms > 0.0
    if not ok.any():
        return None
    mean_dir = (rel[ok] / norms[ok, None]).mean(axis=0)
    length = np.linalg.norm(mean_dir)
    return None if length == 0.0 else mean_dir / length


def _ray_distance(point: np.ndarray, origin: np.ndarray, direction: np.ndarray) -> float:
    rel = point - origin
    return float(np.linalg.norm(rel - (rel @ direction) * direction))


def _farthest_pair(pts: np.ndarray) -> tuple[int, int]:
    """Indices of the farthest point pair; ties resolve to the lowest indices."""
    n = len(pts)
    sq = (pts * pts).sum(axis=1)
    chunk = max(1, int(4_000_000 // max(n, 1)))
    best_d2, best = -1.0, (0, 0)
    for s in range(0, n, chunk):
        block = pts[s:s + chunk]
        # |a-b|^2 via the dot-product expansion; rows index the block.
        d2 = sq[s:s + chunk, None] + sq[None, :] - 2.0 * (block @ pts.T)
        flat = int(np.argmax(d2))
        i, j = divmod(flat, n)
        if d2[i, j] > best_d2:
            best_d2, best = float(d2[i, j]), (s + i, j)
    i, j = best
    return (i, j) if i <= j else (j, i)


def _two_means(pts: np.ndarray, c0: np.ndarray, c1: np.ndarray, max_iter: int = 20):
    """Two-cluster Lloyd iterations; returns (membership, centroid0, centroid1).

    Membership is True for cluster 1; distance ties assign to cluster 0.
    Returns None when a cluster empties (no meaningful split).
    """
    assign = None
    for _ in range(max_iter):
        d0 = ((pts - c0) ** 2).sum(axis=1)
        d1 = ((pts - c1) ** 2).sum(axis=1)
        new_assign = d1 < d0
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        n1 = int(assign.sum())
        if n1 == 0 or n1 == len(pts):
            return None
        c0 = pts[~assign].mean(axis=0)
        c1 = pts[assign].mean(axis=0)
    return assign, c0, c1

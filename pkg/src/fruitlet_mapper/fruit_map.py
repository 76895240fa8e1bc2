"""Persistent fruitlet map: overlap-based merging and stable count ids.

A new sphere estimate either merges into the track it overlaps most (when
the overlap ratio reaches the merge threshold) or founds a new track. Track
ids are assigned at creation and never reused or retired, so the final
count is simply the number of tracks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .extraction import ExtractionConfig, filter_instances, split_occlusion
from .geometry import FRUITLET, CameraFrame
from .sphere_fit import FitConfig, FitError, Sphere, correct_curvature, fit_points

logger = logging.getLogger(__name__)


@dataclass
class MatchConfig:
    """Track-merge policy.

    merge_threshold is the minimum intersection ratio for a merge.
    weighted_average switches the merge update from the pairwise
    (latest-weighted) centroid/radius average to an observation-count
    weighted mean. frame_window, when set, restricts merge candidates to
    tracks last updated within that many frames.
    """

    merge_threshold: float = 0.5
    weighted_average: bool = False
    frame_window: int | None = None

    def __post_init__(self):
        if not 0.0 < self.merge_threshold <= 1.0:
            raise ValueError("merge_threshold must be in (0, 1]")


@dataclass
class FruitletTrack:
    id: int
    sphere: Sphere
    observations: int = 1
    first_frame: int = 0
    last_frame: int = 0


@dataclass
class FruitletMap:
    tracks: list[FruitletTrack] = field(default_factory=list)
    next_id: int = 0


@dataclass
class PipelineStats:
    """Per-stage counters accumulated by process_scan."""

    detections_seen: int = 0
    filtered_out: int = 0
    fit_failures: int = 0
    merges: int = 0
    new_tracks: int = 0


def intersection_ratio(a: Sphere, b: Sphere) -> float:
    """Intersection (lens) volume over the smaller sphere's volume.

    Lens volume for center distance d and radii R >= r:
    http://mathworld.wolfram.com/Sphere-SphereIntersection.html
    Returns 0 for disjoint spheres and 1 for full containment; symmetric in
    its arguments.
    """
    d = float(np.linalg.norm(a.center - b.center))
    big, small = max(a.radius, b.radius), min(a.radius, b.radius)
    if d >= big + small:
        return 0.0
    if d <= big - small:
        return 1.0
    lens = (np.pi * (big + small - d) ** 2
            * (d * d + 2 * d * small - 3 * small * small
               + 2 * d * big + 6 * small * big - 3 * big * big) / (12 * d))
    return float(lens / (4.0 / 3.0 * np.pi * small ** 3))


def register(fmap: FruitletMap, sphere: Sphere, frame_id: int, cfg: MatchConfig) -> FruitletMap:
    """Merge a sphere into its best-overlapping track or start a new one.

    The matched track keeps its id; its sphere becomes the average of the
    two centroids and of the two radii. Ratio ties go to the lowest track
    id. Mutates and returns the map.
    """
    best_track, best_ratio = None, 0.0
    for track in fmap.tracks:
        if cfg.frame_window is not None and frame_id - track.last_frame > cfg.frame_window:
            continue
        ratio = intersection_ratio(track.sphere, sphere)
        if ratio > best_ratio:
            best_track, best_ratio = track, ratio
    if best_track is not None and best_ratio >= cfg.merge_threshold:
        if cfg.weighted_average:
            w = best_track.observations
            center = (best_track.sphere.center * w + sphere.center) / (w + 1)
            radius = (best_track.sphere.radius * w + sphere.radius) / (w + 1)
        else:
            center = (best_track.sphere.center + sphere.center) / 2.0
            radius = (best_track.sphere.radius + sphere.radius) / 2.0
        best_track.sphere = Sphere(center, radius)
        best_track.observations += 1
        best_track.last_frame = max(best_track.last_frame, frame_id)
    else:
        fmap.tracks.append(FruitletTrack(
            id=fmap.next_id, sphere=sphere,
            observations=1, first_frame=frame_id, last_frame=frame_id,
        ))
        fmap.next_id += 1
    return fmap


def count(fmap: FruitletMap) -> int:
    return len(fmap.tracks)


def _observation_seed(base_seed: int, frame_id: int, instance: int) -> int:
    # Decouples per-fit RNG from processing order so frames can be
    # extracted/fitted in parallel without changing results.
    seq = np.random.SeedSequence(entropy=(base_seed, frame_id, instance))
    return int(seq.generate_state(1)[0])


def process_scan(
    frames: list[CameraFrame],
    extraction: ExtractionConfig,
    fit: FitConfig,
    match: MatchConfig,
) -> tuple[FruitletMap, PipelineStats]:
    """Run the full per-frame pipeline and return the map with its stats.

    Stages per frame: filter_instances -> split_occlusion -> sphere fit ->
    curvature correction -> registration. Fit failures (including fits whose
    radius falls outside the configured radius bounds) are logged, counted,
    and skipped. Frames must arrive in strictly ascending frame_id order.
    """
    if not frames:
        raise ValueError("empty frame list")
    ids = [f.frame_id for f in frames]
    if any(b <= a for a, b in zip(ids, ids[1:])):
        raise ValueError("frames must be in strictly ascending frame_id order")

    fmap = FruitletMap()
    stats = PipelineStats()
    r_lo, r_hi = fit.ransac.radius_bounds
    for frame in frames:
        fruit_instances = sum(
            1 for info in frame.masks.instances.values() if info.class_tag == FRUITLET)
        observations = filter_instances(frame, extraction)
        stats.detections_seen += fruit_instances
        stats.filtered_out += fruit_instances - len(observations)
        for obs in observations:
            obs = split_occlusion(obs, extraction)
            cfg = fit
            if fit.method == "ransac":
                seed = _observation_seed(fit.ransac.seed, obs.frame_id, obs.instance)
                cfg = replace(fit, ransac=replace(fit.ransac, seed=seed))
            try:
                result = fit_points(obs.cloud, cfg)
            except FitError as exc:
                stats.fit_failures += 1
                logger.debug("frame %d instance %d: fit failed (%s)",
                             obs.frame_id, obs.instance, exc)
                continue
            result = correct_curvature(result, obs)
            if not r_lo <= result.sphere.radius <= r_hi:
                stats.fit_failures += 1
                logger.debug("frame %d instance %d: radius %.1f mm outside [%g, %g]",
                             obs.frame_id, obs.instance, result.sphere.radius, r_lo, r_hi)
                continue
            before = len(fmap.tracks)
            register(fmap, result.sphere, frame.frame_id, match)
            if len(fmap.tracks) > before:
                stats.new_tracks += 1
            else:
                stats.merges += 1
    return fmap, stats

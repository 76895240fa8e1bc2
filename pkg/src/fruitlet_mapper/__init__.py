"""Multi-view fruitlet counting.

Turns per-frame instance masks, depth maps, and camera poses into a
deduplicated 3D map of sphere-modeled fruitlets with per-branch counts and
sizes. A bundled scan simulator provides exact ground truth for end-to-end
verification.
"""

from .config import PipelineConfig
from .extraction import ExtractionConfig, FruitletObservation, filter_instances, split_occlusion
from .evaluation import (
    CountReport,
    ErrorSummary,
    aggregate,
    compute_metrics,
    match_ground_truth,
    percentage_error,
)
from .fruit_map import (
    FruitletMap,
    FruitletTrack,
    MatchConfig,
    count,
    intersection_ratio,
    process_scan,
    register,
)
from .geometry import (
    CameraFrame,
    CameraIntrinsics,
    DepthImage,
    MaskImage,
    PointCloud,
    RigidTransform,
    backproject,
    compose,
    to_world,
)
from .sphere_fit import (
    FitConfig,
    FitResult,
    RansacConfig,
    Sphere,
    correct_curvature,
    fit_least_squares,
    fit_ransac,
    sphere_from_4,
)

__all__ = [
    "CameraFrame", "CameraIntrinsics", "CountReport", "DepthImage", "ErrorSummary",
    "ExtractionConfig", "FitConfig", "FitResult", "FruitletMap", "FruitletObservation",
    "FruitletTrack", "MaskImage", "MatchConfig", "PipelineConfig", "PointCloud",
    "RansacConfig", "RigidTransform", "Sphere",
    "aggregate", "backproject", "compose", "compute_metrics", "correct_curvature",
    "count", "filter_instances", "fit_least_squares", "fit_ransac", "intersection_ratio",
    "match_ground_truth", "percentage_error", "process_scan", "register",
    "split_occlusion", "sphere_from_4", "to_world",
]

__version__ = "0.1.0"

"""Pipeline configuration and its serialization.

A PipelineConfig captures everything that determines a counting run:
extraction thresholds, fit method and RANSAC parameters (including the
base RNG seed), merge policy, and the evaluation matching tolerance.
Reports embed the exact dict form so any run can be reproduced from header
data alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .extraction import ExtractionConfig
from .fruit_map import MatchConfig
from .sphere_fit import FitConfig, RansacConfig


@dataclass
class PipelineConfig:
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    center_tolerance: float = 15.0

    def to_dict(self) -> dict:
        return {
            "extraction": {
                "min_points": self.extraction.min_points,
                "score_threshold": self.extraction.score_threshold,
                "occlusion_split_enabled": self.extraction.occlusion_split_enabled,
                "cluster_separation_mm": self.extraction.cluster_separation_mm,
            },
            "fit": {
                "method": self.fit.method,
                "ransac": {
                    "iterations_max": self.fit.ransac.iterations_max,
                    "tolerance_t": self.fit.ransac.tolerance_t,
                    "seed": self.fit.ransac.seed,
                    "radius_bounds": list(self.fit.ransac.radius_bounds),
                },
            },
            "match": {
                "merge_threshold": self.match.merge_threshold,
                "weighted_average": self.match.weighted_average,
                "frame_window": self.match.frame_window,
            },
            "center_tolerance": self.center_tolerance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        ext = data.get("extraction", {})
        fit = data.get("fit", {})
        ransac = fit.get("ransac", {})
        match = data.get("match", {})
        return cls(
            extraction=ExtractionConfig(
                min_points=ext.get("min_points", 50),
                score_threshold=ext.get("score_threshold", 0.5),
                occlusion_split_enabled=ext.get("occlusion_split_enabled", True),
                cluster_separation_mm=ext.get("cluster_separation_mm", 25.0),
            ),
            fit=FitConfig(
                method=fit.get("method", "lsq"),
                ransac=RansacConfig(
                    iterations_max=ransac.get("iterations_max", 500),
                    tolerance_t=ransac.get("tolerance_t", 0.05),
                    seed=ransac.get("seed", 0),
                    radius_bounds=tuple(ransac.get("radius_bounds", (5.0, 40.0))),
                ),
            ),
            match=MatchConfig(
                merge_threshold=match.get("merge_threshold", 0.5),
                weighted_average=match.get("weighted_average", False),
                frame_window=match.get("frame_window"),
            ),
            center_tolerance=data.get("center_tolerance", 15.0),
        )

    def with_overrides(self, *, method: str | None = None, seed: int | None = None,
                       merge_threshold: float | None = None) -> "PipelineConfig":
        """New config with the common CLI overrides applied."""
        cfg = self
        if method is not None:
            cfg = replace(cfg, fit=replace(cfg.fit, method=method))
        if seed is not None:
            cfg = replace(cfg, fit=replace(cfg.fit, ransac=replace(cfg.fit.ransac, seed=seed)))
        if merge_threshold is not None:
            cfg = replace(cfg, match=replace(cfg.match, merge_threshold=merge_threshold))
        return cfg

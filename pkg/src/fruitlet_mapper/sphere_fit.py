"""Sphere fitting for fruitlet point clouds.

Two fitters share one algebraic core. A sphere |p - c|^2 = r^2 expands to
the linear relation

    x^2 + y^2 + z^2 = 2*x0*x + 2*y0*y + 2*z0*z + rho,   rho = r^2 - |c|^2,

so exact or least-squares solutions come from a linear system in
(2*x0, 2*y0, 2*z0, rho). Points are shifted to their centroid and rescaled
before solving, which keeps the system well conditioned for mm-scale clouds
far from the origin.

The RANSAC fitter hypothesizes minimal-sample spheres (4 distinct points),
scores them by the relative residual test |dist - r| / r < t, keeps the
hypothesis with the most inliers (ties: earliest), and refines the winner by
least squares on its inlier set.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .extraction import FruitletObservation
from .geometry import PointCloud, as_point

_DEGENERACY_TOL = 1e-9

RANSAC = "ransac"
LEAST_SQUARES = "least_squares"


class FitError(Exception):
    """Base class for sphere-fit failures."""


class InsufficientPointsError(FitError):
    """Fewer than 4 points were supplied."""


class DegenerateInputError(FitError):
    """The points do not determine a sphere (coplanar / rank deficient)."""


class FitFailedError(FitError):
    """No acceptable sphere could be produced from the input."""


@dataclass
class Sphere:
    """Sphere in mm: the geometric stand-in for one fruitlet."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = as_point(self.center)
        self.radius = float(self.radius)
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"radius must be positive and finite, got {self.radius}")

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * np.pi * self.radius ** 3

    def distances(self, points: np.ndarray) -> np.ndarray:
        """Unsigned distance of each point from the sphere surface."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.abs(np.linalg.norm(pts - self.center, axis=1) - self.radius)


@dataclass
class RansacConfig:
    iterations_max: int = 500
    tolerance_t: float = 0.05
    seed: int = 0
    radius_bounds: tuple[float, float] = (5.0, 40.0)

    def __post_init__(self):
        if self.iterations_max < 1:
            raise ValueError("iterations_max must be >= 1")
        if self.tolerance_t <= 0:
            raise ValueError("tolerance_t must be positive")
        lo, hi = self.radius_bounds
        if not 0 < lo < hi:
            raise ValueError("radius_bounds must satisfy 0 < min < max")


@dataclass
class FitConfig:
    """Fit-method selection for the pipeline: 'ransac' or 'lsq'."""

    method: str = "lsq"
    ransac: RansacConfig = None

    def __post_init__(self):
        if self.method not in ("ransac", "lsq"):
            raise ValueError(f"unknown fit method {self.method!r}")
        if self.ransac is None:
            self.ransac = RansacConfig()

    @property
    def method_name(self) -> str:
        return RANSAC if self.method == "ransac" else LEAST_SQUARES


@dataclass
class FitResult:
    sphere: Sphere
    inlier_count: int
    rms_residual: float
    method: str
    # Raw winning hypothesis before the inlier re-fit (RANSAC only).
    hypothesis: Sphere | None = None
    warnings: tuple[str, ...] = ()


def _as_points(points) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.points
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def sphere_from_4(points) -> Sphere:
    """The unique sphere through 4 non-coplanar points.

    Degeneracy is judged on the scale-normalized 4x4 determinant of the
    [x, y, z, 1] rows, so the test is independent of where the quadruple
    sits in the workspace.
    """
    pts = _as_points(points)
    if pts.shape != (4, 3):
        raise InsufficientPointsError(f"need exactly 4 points, got {pts.shape[0]}")
    mean = pts.mean(axis=0)
    q = pts - mean
    scale = float(np.abs(q).max())
    if scale == 0.0:
        raise DegenerateInputError("all 4 points coincide")
    qs = q / scale
    m = np.concatenate([qs, np.ones((4, 1))], axis=1)
    if abs(np.linalg.det(m)) <= _DEGENERACY_TOL:
        raise DegenerateInputError("points are coplanar")
    w = np.linalg.solve(m, (qs * qs).sum(axis=1))
    center_s = w[:3] / 2.0
    r2 = w[3] + center_s @ center_s
    if r2 <= 0.0:
        raise DegenerateInputError("solution has non-positive squared radius")
    return Sphere(center_s * scale + mean, np.sqrt(r2) * scale)


def fit_least_squares(points) -> FitResult:
    """Algebraic least-squares sphere through >= 4 non-coplanar points.

    The printed 3-unknown form of the linear system omits the constant term
    and can only represent spheres through the origin; the standard
    4-unknown system is solved instead. The reported residual is the mean
    unsigned distance of the points from the fitted surface.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n < 4:
        raise InsufficientPointsError(f"need >= 4 points, got {n}")
    mean = pts.mean(axis=0)
    q = pts - mean
    scale = float(np.abs(q).max())
    if scale == 0.0:
        raise DegenerateInputError("all points coincide")
    qs = q / scale
    a = np.concatenate([qs, np.ones((n, 1))], axis=1)
    w, _, rank, _ = np.linalg.lstsq(a, (qs * qs).sum(axis=1), rcond=None)
    if rank < 4:
        raise DegenerateInputError("rank-deficient system (coplanar points)")
    center_s = w[:3] / 2.0
    r2 = w[3] + center_s @ center_s
    if r2 <= 0.0:
        raise FitFailedError("non-positive squared radius")
    sphere = Sphere(center_s * scale + mean, np.sqrt(r2) * scale)
    return FitResult(
        sphere=sphere,
        inlier_count=n,
        rms_residual=float(sphere.distances(pts).mean()),
        method=LEAST_SQUARES,
    )


def fit_ransac(points, cfg: RansacConfig) -> FitResult:
    """RANSAC sphere fit: minimal-sample hypotheses + relative inlier test.

    Hypotheses with radius outside cfg.radius_bounds or from a degenerate
    sample are discarded (they still consume an iteration). The winner is
    refined by least squares on its inlier set; if that refinement fails the
    raw hypothesis is kept. Deterministic for a given seed.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n < 4:
        raise InsufficientPointsError(f"need >= 4 points, got {n}")
    rng = np.random.default_rng(cfg.seed)
    iters = cfg.iterations_max
    r_lo, r_hi = cfg.radius_bounds

    mean = pts.mean(axis=0)
    q = pts - mean
    scale = float(np.abs(q).max())
    if scale == 0.0:
        raise DegenerateInputError("all points coincide")
    qs = q / scale

    counts = np.full(iters, -1, dtype=np.int64)
    centers = np.zeros((iters, 3))
    radii = np.zeros(iters)
    pts_sq = (pts * pts).sum(axis=1)
    pts_t = np.ascontiguousarray(pts.T)

    # Hypotheses are generated and scored in blocks; results are indexed by
    # iteration so the outcome matches a sequential evaluation exactly.
    # Scoring reuses preallocated (block, n) buffers: fresh temporaries of
    # that size dominate the runtime otherwise.
    block = max(1, min(iters, int(4_000_000 // max(n, 1))))
    d2_buf = np.empty((block, n))
    in_lo = np.empty((block, n), dtype=bool)
    in_hi = np.empty((block, n), dtype=bool)
    for start in range(0, iters, block):
        k = min(block, iters - start)
        samples = _distinct_quads(rng, k, n)
        p = qs[samples]                                    # (k, 4, 3)
        m = np.concatenate([p, np.ones((k, 4, 1))], axis=2)
        ok = np.abs(np.linalg.det(m)) > _DEGENERACY_TOL
        if not ok.any():
            continue
        w = _solve_batch(m[ok], (p[ok] ** 2).sum(axis=2))
        solved = np.all(np.isfinite(w), axis=1)
        ctr = w[:, :3] / 2.0
        r2 = w[:, 3] + (ctr * ctr).sum(axis=1)
        pos = solved & (r2 > 0.0)
        ctr_mm = ctr * scale + mean
        r_mm = np.sqrt(np.where(pos, r2, 1.0)) * scale
        accept = pos & (r_mm >= r_lo) & (r_mm <= r_hi)
        if not accept.any():
            continue
        c, r = ctr_mm[accept], r_mm[accept]
        kk = c.shape[0]
        # Squared distances via the dot-product expansion (one GEMM); the
        # relative residual test |d - r|/r < t becomes the squared-bound
        # check r^2 (1-t)^2 < d^2 < r^2 (1+t)^2.
        d2 = np.dot(c, pts_t, out=d2_buf[:kk])
        d2 *= -2.0
        d2 += pts_sq[None, :]
        d2 += (c * c).sum(axis=1)[:, None]
        lo = r * (1.0 - cfg.tolerance_t)
        lo2 = np.where(lo > 0.0, lo * lo, -1.0)
        hi2 = (r * (1.0 + cfg.tolerance_t)) ** 2
        np.greater(d2, lo2[:, None], out=in_lo[:kk])
        np.less(d2, hi2[:, None], out=in_hi[:kk])
        in_lo[:kk] &= in_hi[:kk]
        idx = (np.flatnonzero(ok) + start)[accept]
        counts[idx] = in_lo[:kk].sum(axis=1)
        centers[idx] = c
        radii[idx] = r

    best = int(np.argmax(counts))  # first occurrence wins ties
    if counts[best] < 4:
        raise FitFailedError("no hypothesis reached 4 inliers")
    hypothesis = Sphere(centers[best], radii[best])
    # Rebuild the winning inlier set with the identical squared-bound test.
    d2 = pts_sq - 2.0 * (pts @ hypothesis.center) + hypothesis.center @ hypothesis.center
    lo = hypothesis.radius * (1.0 - cfg.tolerance_t)
    lo2 = lo * lo if lo > 0.0 else -1.0
    hi2 = (hypothesis.radius * (1.0 + cfg.tolerance_t)) ** 2
    inliers = pts[(d2 > lo2) & (d2 < hi2)]
    try:
        sphere = fit_least_squares(inliers).sphere
    except FitError:
        sphere = hypothesis
    return FitResult(
        sphere=sphere,
        inlier_count=int(counts[best]),
        rms_residual=float(sphere.distances(inliers).mean()),
        method=RANSAC,
        hypothesis=hypothesis,
    )


def _solve_batch(m: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Solve a batch of 4x4 systems; singular members come back as NaN rows.

    The determinant pre-filter makes exact singularity rare, but LAPACK
    raises for the whole batch on any zero pivot, so those rows are retried
    one by one.
    """
    try:
        return np.linalg.solve(m, f[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.full(f.shape, np.nan)
        for i in range(m.shape[0]):
            try:
                out[i] = np.linalg.solve(m[i], f[i])
            except np.linalg.LinAlgError:
                pass
        return out


def _distinct_quads(rng: np.random.Generator, k: int, n: int) -> np.ndarray:
    """(k, 4) index samples, each row 4 distinct values; rows with repeats
    are redrawn so the draw stays uniform over distinct quadruples."""
    samples = rng.integers(0, n, size=(k, 4))
    while True:
        s = np.sort(samples, axis=1)
        bad = (s[:, 1:] == s[:, :-1]).any(axis=1)
        if not bad.any():
            return samples
        samples[bad] = rng.integers(0, n, size=(int(bad.sum()), 4))


def fit_points(points, cfg: FitConfig) -> FitResult:
    """Dispatch to the configured fitter."""
    if cfg.method == "ransac":
        return fit_ransac(points, cfg.ransac)
    return fit_least_squares(points)


def correct_curvature(fit: FitResult, obs: FruitletObservation) -> FitResult:
    """Flip a center that landed on the camera side of the observed surface.

    A fruitlet surface patch always curves away from the camera, so a valid
    center lies beyond the patch centroid along the viewing direction. A
    center on the near side is reflected through the patch centroid; the
    radius is kept. Applying the correction twice equals applying it once.
    """
    m = fit.sphere.center if len(obs.cloud) == 0 else obs.cloud.centroid()
    view = m - obs.camera_center
    norm = np.linalg.norm(view)
    if norm == 0.0:
        if "no-view-direction" in fit.warnings:
            return fit
        return replace(fit, warnings=fit.warnings + ("no-view-direction",))
    view = view / norm
    if (fit.sphere.center - m) @ view < 0.0:
        flipped = Sphere(2.0 * m - fit.sphere.center, fit.sphere.radius)
        return replace(fit, sphere=flipped)
    return fit

"""Shared test helpers: synthetic geometry generators used as oracles.

These generators construct data directly from known parameters (points
sampled on a parameterized sphere, rigid transforms from axis-angle), so
the expectations they encode are independent of the code under test.
"""

from __future__ import annotations

import numpy as np
import pytest

from fruitlet_mapper.geometry import RigidTransform


def sphere_points(center, radius, n, rng=None, hemisphere_toward=None):
    """Points exactly on a sphere surface via the angular parameterization.

    With hemisphere_toward set, only the half facing that direction is
    sampled (the occluded-fruit viewing regime).
    """
    rng = rng or np.random.default_rng(0)
    center = np.asarray(center, dtype=float)
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    if hemisphere_toward is not None:
        toward = np.asarray(hemisphere_toward, dtype=float)
        toward = toward / np.linalg.norm(toward)
        facing = pts @ toward
        pts[facing < 0] -= 2.0 * facing[facing < 0, None] * toward
    return center + radius * pts


def random_rigid(rng=None) -> RigidTransform:
    """Uniformly random rotation (QR of a Gaussian matrix) plus translation."""
    rng = rng or np.random.default_rng(0)
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return RigidTransform(q, rng.uniform(-500, 500, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

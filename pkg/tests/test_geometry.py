"""Backprojection, rigid transforms, and their round-trip invariants.

Expected 3D coordinates are hand-computed from the pinhole model:
    X = (u - cx) * z / fx,  Y = (v - cy) * z / fy,  Z = z.
"""

import numpy as np
import pytest

from fruitlet_mapper.geometry import (
    FRUITLET,
    CameraIntrinsics,
    DepthImage,
    InstanceInfo,
    MaskImage,
    PointCloud,
    RigidTransform,
    backproject,
    compose,
    to_world,
)

from conftest import random_rigid


def make_frame_parts(w=64, h=48, fx=100.0, fy=100.0):
    intr = CameraIntrinsics(fx, fy, (w - 1) / 2.0, (h - 1) / 2.0, w, h)
    depth = np.zeros((h, w), dtype=np.float32)
    labels = np.zeros((h, w), dtype=np.uint16)
    return intr, depth, labels


class TestBackproject:
    def test_principal_point_ray(self):
        # Pixel at the principal point with depth 400 -> (0, 0, 400).
        intr, depth, labels = make_frame_parts(65, 49)  # integer principal point
        u, v = int(intr.cx), int(intr.cy)
        depth[v, u] = 400.0
        labels[v, u] = 1
        mask = MaskImage(labels, {1: InstanceInfo(FRUITLET, 1.0)})
        cloud = backproject(DepthImage(depth), intr, mask, 1)
        np.testing.assert_allclose(cloud.points, [[0.0, 0.0, 400.0]], atol=1e-9)
        assert cloud.frame == "camera"

    def test_45_degree_ray(self):
        # Pixel fx to the right of the principal point: X = z exactly.
        intr, depth, labels = make_frame_parts(257, 49, fx=100.0)  # integer cx
        u, v = int(intr.cx + intr.fx), int(intr.cy)
        depth[v, u] = 400.0
        labels[v, u] = 1
        mask = MaskImage(labels, {1: InstanceInfo(FRUITLET, 1.0)})
        cloud = backproject(DepthImage(depth), intr, mask, 1)
        np.testing.assert_allclose(cloud.points, [[400.0, 0.0, 400.0]], atol=1e-9)

    def test_invalid_depth_skipped_and_row_major_order(self):
        intr, depth, labels = make_frame_parts()
        labels[10, 5] = labels[10, 6] = labels[11, 5] = 1
        depth[10, 5] = 300.0
        depth[10, 6] = 0.0  # invalid -> skipped
        depth[11, 5] = 310.0
        mask = MaskImage(labels, {1: InstanceInfo(FRUITLET, 1.0)})
        cloud = backproject(DepthImage(depth), intr, mask, 1)
        assert len(cloud) == 2
        np.testing.assert_allclose(cloud.points[:, 2], [300.0, 310.0])  # (10,5) then (11,5)

    def test_unknown_instance_errors(self):
        intr, depth, labels = make_frame_parts()
        mask = MaskImage(labels, {})
        with pytest.raises(ValueError, match="unknown instance"):
            backproject(DepthImage(depth), intr, mask, 3)

    def test_zero_valid_pixels_gives_empty_cloud(self):
        intr, depth, labels = make_frame_parts()
        labels[5, 5] = 1  # masked but invalid depth
        mask = MaskImage(labels, {1: InstanceInfo(FRUITLET, 1.0)})
        cloud = backproject(DepthImage(depth), intr, mask, 1)
        assert len(cloud) == 0

    def test_reprojection_roundtrip_within_half_pixel(self, rng):
        intr, depth, labels = make_frame_parts(64, 48)
        values = rng.uniform(200.0, 600.0, size=depth.shape).astype(np.float32)
        labels[:] = 1
        mask = MaskImage(labels, {1: InstanceInfo(FRUITLET, 1.0)})
        cloud = backproject(DepthImage(values), intr, mask, 1)
        uv = intr.project(cloud.points)
        v_idx, u_idx = np.nonzero(labels)
        np.testing.assert_allclose(uv[:, 0], u_idx, atol=0.5)
        np.testing.assert_allclose(uv[:, 1], v_idx, atol=0.5)


class TestRigidTransform:
    def test_identity_to_world(self):
        cloud = PointCloud([[1.0, 2.0, 3.0]], "camera")
        out = to_world(cloud, RigidTransform.identity())
        np.testing.assert_allclose(out.points, cloud.points)
        assert out.frame == "world"

    def test_pure_translation(self):
        pose = RigidTransform(np.eye(3), [10.0, 0.0, 0.0])
        out = to_world(PointCloud([[1.0, 2.0, 3.0]]), pose)
        np.testing.assert_allclose(out.points, [[11.0, 2.0, 3.0]])

    def test_double_transform_guarded(self):
        world = PointCloud([[1.0, 2.0, 3.0]], "world")
        with pytest.raises(ValueError, match="world"):
            to_world(world, RigidTransform.identity())

    def test_distances_preserved(self, rng):
        pts = rng.uniform(-100, 100, (50, 3))
        pose = random_rigid(rng)
        moved = to_world(PointCloud(pts), pose).points
        before = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        after = np.linalg.norm(moved[:, None] - moved[None, :], axis=2)
        np.testing.assert_allclose(after, before, rtol=1e-9, atol=1e-9)

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError, match="orthonormal"):
            RigidTransform(np.eye(3) * 2.0, np.zeros(3))
        reflection = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="orthonormal"):
            RigidTransform(reflection, np.zeros(3))


class TestCompose:
    def test_identity_neutral(self, rng):
        t = random_rigid(rng)
        for composed in (compose(RigidTransform.identity(), t),
                         compose(t, RigidTransform.identity())):
            np.testing.assert_allclose(composed.rotation, t.rotation, atol=1e-12)
            np.testing.assert_allclose(composed.translation, t.translation, atol=1e-12)

    def test_inverse_gives_identity(self, rng):
        t = random_rigid(rng)
        ident = compose(t, t.inverse())
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(ident.translation, np.zeros(3), atol=1e-9)

    def test_matches_sequential_application(self, rng):
        t1, t2 = random_rigid(rng), random_rigid(rng)
        pts = rng.uniform(-200, 200, (100, 3))
        np.testing.assert_allclose(
            compose(t1, t2).apply(pts), t1.apply(t2.apply(pts)), atol=1e-9)

    def test_orthonormality_survives_long_chains(self, rng):
        t = RigidTransform.identity()
        for _ in range(100):
            t = compose(t, random_rigid(rng))
            det = np.linalg.det(t.rotation)
            assert abs(det - 1.0) < 1e-6


class TestValidation:
    def test_intrinsics_reject_bad_values(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(-1.0, 100.0, 32.0, 24.0, 64, 48)
        with pytest.raises(ValueError):
            CameraIntrinsics(100.0, 100.0, 64.0, 24.0, 64, 48)  # cx outside

    def test_mask_labels_must_be_contiguous(self):
        labels = np.zeros((4, 4), dtype=np.uint16)
        labels[0, 0] = 2
        with pytest.raises(ValueError):
            MaskImage(labels, {2: InstanceInfo(FRUITLET, 1.0)})

    def test_cloud_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            PointCloud([[np.nan, 0.0, 0.0]])

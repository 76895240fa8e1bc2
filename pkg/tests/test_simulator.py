"""Scene generation, trajectory geometry, and the ray-cast renderer.

The renderer's contract is exactness: a rendered depth pixel backprojects
onto the generating primitive, so round trips through the geometry module
verify both at once.
"""

import numpy as np
import pytest

from fruitlet_mapper.extraction import ExtractionConfig, filter_instances
from fruitlet_mapper.fruit_map import MatchConfig, process_scan
from fruitlet_mapper.geometry import CameraIntrinsics, backproject, to_world
from fruitlet_mapper.sphere_fit import FitConfig, Sphere
from fruitlet_mapper.simulator import (
    Disc,
    NoiseSpec,
    Scene,
    SceneGenerationError,
    SceneSpec,
    TrajectorySpec,
    add_noise,
    contaminate_masks,
    default_intrinsics,
    generate_scene,
    plan_trajectory,
    render_frame,
    render_scan,
)


def tiny_intrinsics(w=161, h=121):
    # Odd sizes put the principal point on a pixel center.
    return CameraIntrinsics(0.58 * w, 0.58 * w, (w - 1) / 2, (h - 1) / 2, w, h)


def line_to_line_distance(p0, d0, p1, d1):
    n = np.cross(d0, d1)
    if np.linalg.norm(n) < 1e-12:
        rel = p1 - p0
        return np.linalg.norm(rel - (rel @ d0) * d0)
    return abs((p1 - p0) @ n) / np.linalg.norm(n)


class TestGenerateScene:
    def test_zero_fruitlets(self):
        scene = generate_scene(SceneSpec(fruitlet_count=0, leaf_count=5, seed=1))
        assert scene.fruitlets == []
        assert len(scene.leaves) == 5

    def test_deterministic(self):
        a = generate_scene(SceneSpec(fruitlet_count=40, seed=7))
        b = generate_scene(SceneSpec(fruitlet_count=40, seed=7))
        for (ia, sa), (ib, sb) in zip(a.fruitlets, b.fruitlets):
            assert ia == ib
            np.testing.assert_array_equal(sa.center, sb.center)
            assert sa.radius == sb.radius

    def test_population_respects_spec(self):
        # 1000 seeded scenes: cluster sizes, radii, and separation in range.
        for seed in range(1000):
            spec = SceneSpec(fruitlet_count=15, leaf_count=5, seed=seed)
            scene = generate_scene(spec)
            assert sum(len(c) for c in scene.clusters) == 15
            assert all(1 <= len(c) <= 5 for c in scene.clusters)
            radii = [s.radius for _, s in scene.fruitlets]
            assert all(8.0 <= r <= 18.0 for r in radii)
            spheres = [s for _, s in scene.fruitlets]
            for i, a in enumerate(spheres):
                for b in spheres[i + 1:]:
                    gap = np.linalg.norm(a.center - b.center)
                    assert gap >= 0.7 * (a.radius + b.radius) - 1e-9

    def test_impossible_packing_raises(self):
        spec = SceneSpec(branch_length=30.0, fruitlet_count=300,
                         fruitlet_radius_range=(17.0, 18.0), seed=0)
        with pytest.raises(SceneGenerationError):
            generate_scene(spec)

    def test_cluster_size_validation(self):
        with pytest.raises(ValueError):
            SceneSpec(cluster_size_range=(0, 5))
        with pytest.raises(ValueError):
            SceneSpec(cluster_size_range=(2, 6))


class TestPlanTrajectory:
    def test_default_72_viewpoints(self):
        scene = generate_scene(SceneSpec(fruitlet_count=0, leaf_count=0))
        poses = plan_trajectory(TrajectorySpec(), scene)
        assert len(poses) == 72

    def test_single_pose_aims_at_branch_axis(self):
        scene = generate_scene(SceneSpec(fruitlet_count=0, leaf_count=0))
        spec = TrajectorySpec(arc_points=1, arcs=1, standoff=(350.0, 350.0))
        (pose,) = plan_trajectory(spec, scene)
        start, end = scene.branch_axis
        axis = (end - start) / np.linalg.norm(end - start)
        optical_axis = pose.rotation[:, 2]
        miss = line_to_line_distance(pose.translation, optical_axis, start, axis)
        assert miss < 1e-6

    def test_standoff_range_respected(self):
        scene = generate_scene(SceneSpec(fruitlet_count=0, leaf_count=0))
        start, end = scene.branch_axis
        axis = (end - start) / np.linalg.norm(end - start)
        for pose in plan_trajectory(TrajectorySpec(), scene):
            rel = pose.translation - start
            dist = np.linalg.norm(rel - (rel @ axis) * axis)
            assert 300.0 - 1e-9 <= dist <= 400.0 + 1e-9

    def test_rotations_are_valid(self):
        scene = generate_scene(SceneSpec(fruitlet_count=3, seed=2))
        for pose in plan_trajectory(TrajectorySpec(arcs=2, arc_points=5), scene):
            assert abs(np.linalg.det(pose.rotation) - 1.0) < 1e-9


def single_sphere_scene(center, radius, leaves=()):
    return Scene(fruitlets=[(0, Sphere(np.asarray(center, dtype=float), radius))],
                 leaves=list(leaves),
                 branch_axis=(np.zeros(3), np.array([900.0, 0.0, 0.0])))


class TestRenderFrame:
    def test_center_pixel_depth_is_near_surface(self):
        # Camera on -y at 400 mm aiming at a r=15 sphere: depth 400 - 15.
        scene = single_sphere_scene([450.0, 0.0, 0.0], 15.0)
        spec = TrajectorySpec(arc_points=1, arcs=1, standoff=(400.0, 400.0),
                              intrinsics=tiny_intrinsics())
        (pose,) = plan_trajectory(spec, scene)
        frame = render_frame(scene, pose, spec.intrinsics)
        v, u = int(spec.intrinsics.cy), int(spec.intrinsics.cx)
        assert frame.depth.values[v, u] == pytest.approx(385.0, abs=1e-4)
        assert frame.masks.labels[v, u] == 1
        assert frame.masks.instances[1].source_id == 0

    def test_sphere_behind_leaf_is_unlabeled(self):
        # A large disc between camera and fruit occludes it completely.
        leaf = Disc(np.array([450.0, -100.0, 0.0]), np.array([0.0, 1.0, 0.0]), 80.0)
        scene = single_sphere_scene([450.0, 0.0, 0.0], 12.0, leaves=[leaf])
        spec = TrajectorySpec(arc_points=1, arcs=1, standoff=(380.0, 380.0),
                              intrinsics=tiny_intrinsics())
        (pose,) = plan_trajectory(spec, scene)
        frame = render_frame(scene, pose, spec.intrinsics)
        assert len(frame.masks.instances) == 0
        assert np.count_nonzero(frame.masks.labels) == 0
        # The leaf still rendered depth in front of where the fruit would be.
        v, u = int(spec.intrinsics.cy), int(spec.intrinsics.cx)
        assert 0 < frame.depth.values[v, u] < 385.0

    def test_backprojected_pixels_lie_on_true_sphere(self):
        scene = single_sphere_scene([430.0, 20.0, -10.0], 14.0)
        spec = TrajectorySpec(arc_points=3, arcs=1, standoff=(320.0, 400.0),
                              intrinsics=tiny_intrinsics())
        for pose in plan_trajectory(spec, scene):
            frame = render_frame(scene, pose, spec.intrinsics)
            if 1 not in frame.masks.instances:
                continue
            cloud = to_world(
                backproject(frame.depth, frame.intrinsics, frame.masks, 1), pose)
            truth = scene.fruitlets[0][1]
            err = np.abs(np.linalg.norm(cloud.points - truth.center, axis=1) - truth.radius)
            assert err.max() < 0.5
            assert err.max() < 1e-3  # exact up to float32 depth storage

    def test_branch_renders_depth_without_label(self):
        scene = Scene([], [], (np.zeros(3), np.array([900.0, 0, 0])))
        spec = TrajectorySpec(arc_points=1, arcs=1, standoff=(350.0, 350.0),
                              intrinsics=tiny_intrinsics())
        (pose,) = plan_trajectory(spec, scene)
        frame = render_frame(scene, pose, spec.intrinsics)
        v, u = int(spec.intrinsics.cy), int(spec.intrinsics.cx)
        assert frame.depth.values[v, u] == pytest.approx(340.0, abs=1e-4)
        assert np.count_nonzero(frame.masks.labels) == 0

    def test_two_fruitlets_get_distinct_contiguous_labels(self):
        scene = Scene(
            fruitlets=[(3, Sphere(np.array([430.0, 0.0, 30.0]), 12.0)),
                       (7, Sphere(np.array([470.0, 0.0, -30.0]), 12.0))],
            leaves=[],
            branch_axis=(np.zeros(3), np.array([900.0, 0.0, 0.0])))
        spec = TrajectorySpec(arc_points=1, arcs=1, standoff=(380.0, 380.0),
                              intrinsics=tiny_intrinsics())
        (pose,) = plan_trajectory(spec, scene)
        frame = render_frame(scene, pose, spec.intrinsics)
        assert sorted(frame.masks.instances) == [1, 2]
        assert frame.masks.instances[1].source_id == 3
        assert frame.masks.instances[2].source_id == 7


class TestOcclusionVisibility:
    def test_mostly_occluded_fruitlet_drops_below_min_points(self):
        # Three fruitlets; a small disc sits on the line of sight to the
        # third and hides ~90% of it, pushing it under the point threshold.
        camera_target = np.array([450.0, 0.0, 0.0])
        fruit = [Sphere(np.array([420.0, 0.0, 25.0]), 12.0),
                 Sphere(np.array([450.0, 0.0, -25.0]), 12.0),
                 Sphere(np.array([480.0, 0.0, 25.0]), 12.0)]
        cam_pos = np.array([450.0, -350.0, 0.0])
        los = fruit[2].center - cam_pos
        los /= np.linalg.norm(los)
        leaf = Disc(fruit[2].center - 40.0 * los, los, 10.0)
        scene = Scene(fruitlets=list(enumerate(fruit)), leaves=[leaf],
                      branch_axis=(np.zeros(3), np.array([900.0, 0.0, 0.0])))
        spec = TrajectorySpec(arc_points=1, arcs=1, standoff=(350.0, 350.0),
                              intrinsics=default_intrinsics())
        (pose,) = plan_trajectory(spec, scene)
        np.testing.assert_allclose(pose.translation, cam_pos, atol=1e-9)
        frame = render_frame(scene, pose, spec.intrinsics)

        counts = {frame.masks.instances[lbl].source_id: frame.masks.pixel_count(lbl)
                  for lbl in frame.masks.instances}
        assert counts[0] >= 100 and counts[1] >= 100
        assert 0 < counts[2] < 100

        obs = filter_instances(frame, ExtractionConfig(min_points=100))
        sources = {frame.masks.instances[o.instance].source_id for o in obs}
        assert len(obs) == 2 and sources == {0, 1}


class TestAddNoise:
    def flat_frame(self, w=101, h=101, lo=300.0, hi=500.0):
        intr = CameraIntrinsics(100.0, 100.0, (w - 1) / 2, (h - 1) / 2, w, h)
        scene = single_sphere_scene([0.0, 0.0, 0.0], 5.0)
        pose = plan_trajectory(
            TrajectorySpec(arc_points=1, arcs=1, standoff=(350, 350), intrinsics=intr),
            scene)[0]
        from fruitlet_mapper.geometry import CameraFrame, DepthImage, MaskImage
        depth = np.linspace(lo, hi, w * h, dtype=np.float32).reshape(h, w)
        depth[0, :5] = 0.0  # a few invalid pixels
        return CameraFrame(0, intr, pose, DepthImage(depth),
                           MaskImage(np.zeros((h, w), dtype=np.uint16), {}))

    def test_zero_noise_is_identity(self):
        frame = self.flat_frame()
        out = add_noise(frame, 0.0, 0.0, seed=1)
        np.testing.assert_array_equal(out.depth.values, frame.depth.values)

    def test_gaussian_noise_statistics(self):
        frame = self.flat_frame(1001, 1001)
        out = add_noise(frame, 1.0, 0.0, seed=2)
        valid = frame.depth.valid
        delta = (out.depth.values[valid].astype(np.float64)
                 - frame.depth.values[valid].astype(np.float64))
        assert abs(delta.mean()) < 0.05
        assert delta.std() == pytest.approx(1.0, abs=0.01)
        # Invalid pixels untouched.
        np.testing.assert_array_equal(out.depth.values[~valid],
                                      frame.depth.values[~valid])

    def test_outlier_rate(self):
        frame = self.flat_frame(501, 501)
        out = add_noise(frame, 1.0, 0.3, seed=3)
        valid = frame.depth.valid
        delta = np.abs(out.depth.values[valid] - frame.depth.values[valid])
        altered = (delta > 3.0).mean()
        assert altered == pytest.approx(0.30, abs=0.01)

    def test_deterministic(self):
        frame = self.flat_frame()
        a = add_noise(frame, 2.0, 0.1, seed=9)
        b = add_noise(frame, 2.0, 0.1, seed=9)
        np.testing.assert_array_equal(a.depth.values, b.depth.values)


class TestContaminateAndScan:
    def scene_and_spec(self):
        scene = generate_scene(SceneSpec(fruitlet_count=6, leaf_count=6, seed=3,
                                         branch_length=300.0))
        spec = TrajectorySpec(arc_points=4, arcs=2, intrinsics=tiny_intrinsics())
        return scene, spec

    def test_contamination_grows_masks_over_valid_depth_only(self):
        scene, spec = self.scene_and_spec()
        for pose in plan_trajectory(spec, scene):
            frame = render_frame(scene, pose, spec.intrinsics)
            if not frame.masks.instances:
                continue
            dirty = contaminate_masks(frame, 3)
            np.testing.assert_array_equal(dirty.depth.values, frame.depth.values)
            for label in frame.masks.instances:
                before = frame.masks.labels == label
                after = dirty.masks.labels == label
                assert after[before].all()  # original pixels keep their label
                new = after & ~before
                assert frame.depth.valid[new].all()
                assert (frame.masks.labels[new] == 0).all()
            break

    def test_render_scan_visibility_and_drops(self):
        scene, spec = self.scene_and_spec()
        poses = plan_trajectory(spec, scene)
        frames, visibility = render_scan(scene, poses, spec.intrinsics,
                                         NoiseSpec(frame_drop_rate=0.4, seed=5))
        assert 1 <= len(frames) < len(poses)
        kept_ids = [f.frame_id for f in frames]
        assert kept_ids == sorted(kept_ids)
        # Visibility counts must equal mask pixel counts of the clean render.
        for frame in frames:
            for label, info in frame.masks.instances.items():
                assert visibility[info.source_id][frame.frame_id] == \
                    frame.masks.pixel_count(label)

    def test_noise_free_scan_counts_visible_fruit_exactly(self):
        # End to end on a small scene: every adequately visible fruitlet
        # becomes exactly one track, and no spurious tracks appear.
        scene, spec = self.scene_and_spec()
        poses = plan_trajectory(spec, scene)
        frames, visibility = render_scan(scene, poses, spec.intrinsics)
        ext = ExtractionConfig(min_points=50)
        fmap, stats = process_scan(frames, ext, FitConfig(method="lsq"), MatchConfig())
        visible = {fid for fid, per in visibility.items()
                   if any(c >= ext.min_points for c in per.values())}
        assert len(fmap.tracks) == len(visible)
        by_id = dict(scene.fruitlets)
        for track in fmap.tracks:
            best = min(visible,
                       key=lambda fid: np.linalg.norm(by_id[fid].center - track.sphere.center))
            err = np.linalg.norm(by_id[best].center - track.sphere.center)
            assert err < 1.0

import math

import numpy as np
import pytest

from sgmap.errors import DegenerateGeometry, EmptyPointSet
from sgmap.geometry import (
    CameraIntrinsics,
    GravityConfig,
    Obb,
    RigidPose,
    fit_obb,
    look_at_pose,
    obb_collide,
    obb_contains,
    project,
    project_points,
    remove_outliers,
    rotation_about_axis,
)

HALF_PI = math.pi / 2.0


def naive_mean_knn_distance(points, k):
    """O(n^2) mean distance to the k nearest neighbours of each point."""
    points = np.asarray(points, dtype=float)
    out = np.zeros(len(points))
    for i, p in enumerate(points):
        dists = np.sort(np.linalg.norm(points - p, axis=1))
        out[i] = dists[1 : k + 1].mean()
    return out


def sweep_min_area(points_xy, step_deg=0.01):
    """Brute-force minimum rectangle area over a fine yaw sweep."""
    best = np.inf
    for deg in np.arange(0.0, 90.0, step_deg):
        a = math.radians(deg)
        c, s = math.cos(a), math.sin(a)
        u = points_xy[:, 0] * c + points_xy[:, 1] * s
        v = -points_xy[:, 0] * s + points_xy[:, 1] * c
        area = (u.max() - u.min()) * (v.max() - v.min())
        if area < best:
            best = area
    return best


def obb_equivalent(a: Obb, b: Obb, tol=1e-6):
    """Equality up to the quarter-turn rectangle symmetry."""
    if np.any(np.abs(a.center - b.center) > tol):
        return False
    if abs(a.dims[2] - b.dims[2]) > tol:
        return False
    dyaw = (a.yaw - b.yaw) % HALF_PI
    dyaw = min(dyaw, HALF_PI - dyaw)
    same = np.all(np.abs(a.dims[:2] - b.dims[:2]) <= tol)
    swapped = np.all(np.abs(a.dims[:2] - b.dims[::-1][1:]) <= tol)
    return dyaw <= tol and (same or swapped)


class TestRemoveOutliers:
    def test_far_point_removed_matches_naive_oracle(self):
        grid = np.array(
            [[x, y, 0.0] for x in range(10) for y in range(10)], dtype=float
        )
        pts = np.vstack([grid, [[100.0, 100.0, 100.0]]])
        kept = remove_outliers(pts, mean_k=8, std_ratio=2.0)
        assert len(kept) == 100
        assert not any(np.allclose(p, [100, 100, 100]) for p in kept)

        mean_d = naive_mean_knn_distance(pts, 8)
        thr = mean_d.mean() + 2.0 * mean_d.std()
        expect = pts[mean_d <= thr]
        np.testing.assert_allclose(np.sort(kept, axis=0), np.sort(expect, axis=0))

    def test_small_inputs_unchanged(self):
        pts = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(remove_outliers(pts, mean_k=8), pts)

    def test_identical_points_all_retained(self):
        pts = np.tile([[1.0, 2.0, 3.0]], (20, 1))
        assert len(remove_outliers(pts, mean_k=4)) == 20

    def test_empty_raises(self):
        with pytest.raises(EmptyPointSet):
            remove_outliers(np.empty((0, 3)))

    def test_output_subset_of_input(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(80, 3))
        kept = remove_outliers(pts, mean_k=8)
        rows = {tuple(p) for p in pts}
        assert all(tuple(p) in rows for p in kept)

    def test_idempotent_when_inliers_fit_threshold(self):
        # Mean-plus-k-sigma trimming cascades when the surviving spread
        # still crosses the threshold (at ratio 2 the grid corners fall on
        # the second pass), so idempotence is only guaranteed once the
        # inlier spread fits inside the band.
        grid = np.array(
            [[x, y, 0.0] for x in range(10) for y in range(10)], dtype=float
        )
        pts = np.vstack([grid, [[100.0, 100.0, 100.0]]])
        once = remove_outliers(pts, mean_k=8, std_ratio=4.0)
        assert len(once) == 100
        twice = remove_outliers(once, mean_k=8, std_ratio=4.0)
        np.testing.assert_array_equal(once, twice)

        identical = np.tile([[0.5, 0.5, 0.5]], (30, 1))
        np.testing.assert_array_equal(
            remove_outliers(identical, mean_k=4),
            remove_outliers(remove_outliers(identical, mean_k=4), mean_k=4),
        )


class TestFitObb:
    def test_axis_aligned_unit_cube(self):
        pts = np.array(
            [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float
        )
        box = fit_obb(pts)
        np.testing.assert_allclose(box.center, [0.5, 0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(box.dims, [1, 1, 1], atol=1e-12)
        assert box.yaw == 0.0

    def test_rotated_square_recovers_yaw(self):
        rot = rotation_about_axis(np.array([0.0, 0.0, 1.0]), math.pi / 6)
        base = np.array(
            [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0.5, 0.5, 0.3]], dtype=float
        )
        box = fit_obb(base @ rot.T)
        assert abs(box.yaw - math.pi / 6) < 1e-6
        np.testing.assert_allclose(box.dims[:2], [1, 1], atol=1e-9)

    def test_beats_yaw_sweep_on_random_clouds(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            pts = rng.normal(size=(50, 3)) * [2.0, 0.7, 0.4]
            box = fit_obb(pts)
            assert box.horizontal_area <= sweep_min_area(pts[:, :2]) + 1e-9

    def test_contains_all_points(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            pts = rng.normal(size=(40, 3))
            box = fit_obb(pts)
            assert obb_contains(box, pts, tol=1e-9)

    def test_invariant_under_translation_and_up_rotation(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(30, 3))
        base = fit_obb(pts)
        shift = np.array([3.0, -2.0, 7.0])
        moved = fit_obb(pts + shift)
        assert obb_equivalent(
            Obb(base.center + shift, base.dims, base.yaw), moved, tol=1e-6
        )
        angle = 0.77
        rot = rotation_about_axis(np.array([0.0, 0.0, 1.0]), angle)
        turned = fit_obb(pts @ rot.T)
        assert np.all(np.abs(turned.center - rot @ base.center) < 1e-6)
        assert abs(turned.horizontal_area - base.horizontal_area) < 1e-9
        dyaw = (turned.yaw - (base.yaw + angle)) % HALF_PI
        assert min(dyaw, HALF_PI - dyaw) < 1e-6

    def test_degenerate_inputs_raise(self):
        with pytest.raises(DegenerateGeometry):
            fit_obb(np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))
        colinear = np.array([[t, 2 * t, 0.0] for t in np.linspace(0, 1, 12)])
        with pytest.raises(DegenerateGeometry):
            fit_obb(colinear)

    def test_custom_gravity_axis(self):
        gravity = GravityConfig(up=np.array([0.0, 1.0, 0.0]))
        pts = np.array(
            [[x, y, z] for x in (0, 2) for y in (0, 0.5) for z in (0, 1)], dtype=float
        )
        box = fit_obb(pts, gravity)
        assert abs(box.dims[2] - 0.5) < 1e-9  # vertical extent along +y


class TestObbCollide:
    def test_identical_boxes_touch(self):
        a = Obb(center=[0, 0, 0], dims=[1, 1, 1], yaw=0.0)
        assert obb_collide(a, a, margin=0.0)

    def test_margin_arithmetic(self):
        a = Obb(center=[0, 0, 0], dims=[1, 1, 1], yaw=0.0)
        b = Obb(center=[1.4, 0, 0], dims=[1, 1, 1], yaw=0.0)
        assert obb_collide(a, b, margin=0.5)  # gap 0.4 < 2 * 0.5
        assert not obb_collide(a, b, margin=0.1)

    def test_vertical_separation(self):
        a = Obb(center=[0, 0, 0], dims=[1, 1, 1], yaw=0.0)
        b = Obb(center=[0, 0, 2.5], dims=[1, 1, 1], yaw=0.0)
        assert not obb_collide(a, b, margin=0.2)
        assert obb_collide(a, b, margin=0.75)

    def test_symmetric_on_random_pairs(self):
        rng = np.random.default_rng(21)
        for _ in range(60):
            a = Obb(rng.normal(size=3), rng.uniform(0.2, 2.0, 3), rng.uniform(0, 1.5))
            b = Obb(rng.normal(size=3), rng.uniform(0.2, 2.0, 3), rng.uniform(0, 1.5))
            m = rng.uniform(0, 0.5)
            assert obb_collide(a, b, m) == obb_collide(b, a, m)

    def test_rotated_rectangles_need_full_axis_test(self):
        a = Obb(center=[0, 0, 0], dims=[2.0, 0.2, 1.0], yaw=0.0)
        b = Obb(center=[0, 0.8, 0], dims=[2.0, 0.2, 1.0], yaw=math.pi / 4)
        assert obb_collide(a, b, margin=0.0)
        c = Obb(center=[0, 1.6, 0], dims=[2.0, 0.2, 1.0], yaw=0.0)
        assert not obb_collide(a, c, margin=0.0)


class TestProjection:
    def setup_method(self):
        self.K = CameraIntrinsics(fx=100, fy=100, cx=80, cy=60, width=160, height=120)
        self.pose = look_at_pose(np.array([0.0, -2.0, 0.0]), np.array([0.0, 0.0, 0.0]))

    def test_optical_axis(self):
        hit = project(np.array([0.0, 0.0, 0.0]), self.pose, self.K)
        assert hit is not None
        u, v, depth = hit
        assert (u, v) == (self.K.cx, self.K.cy)
        assert depth == pytest.approx(2.0)

    def test_behind_camera_invisible(self):
        assert project(np.array([0.0, -4.0, 0.0]), self.pose, self.K) is None

    def test_right_edge_exclusive(self):
        # u = fx * x/z + cx = width  =>  x = z * (width - cx) / fx
        x = 2.0 * (self.K.width - self.K.cx) / self.K.fx
        assert project(np.array([x, 0.0, 0.0]), self.pose, self.K) is None
        eps = 1e-9
        assert project(np.array([x - eps, 0.0, 0.0]), self.pose, self.K) is not None

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(50, 3)) * 2.0
        uv, depth, visible = project_points(pts, self.pose, self.K)
        for i, p in enumerate(pts):
            single = project(p, self.pose, self.K)
            if visible[i]:
                assert single == (uv[i, 0], uv[i, 1], depth[i])
            else:
                assert single is None

    def test_pose_validation(self):
        with pytest.raises(ValueError):
            RigidPose(rotation=np.eye(3) * 2.0, translation=np.zeros(3))

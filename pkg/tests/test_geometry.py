import math

import numpy as np
import pytest

from crossroads.geometry import (DegenerateYawError, FrameMismatchError,
                                 Pose2, Pose3, PointCloud, compose, compose2,
                                 inverse, inverse2, normalize_angle,
                                 pose_delta, project_to_pose2,
                                 transform_points)
from oracles import random_rotation, rot_x, rot_z


def random_pose(rng):
    return Pose3(random_rotation(rng), rng.uniform(-50, 50, 3))


def translate(x, y, z):
    return Pose3(np.eye(3), np.array([x, y, z], dtype=float))


def test_compose_identity():
    rng = np.random.default_rng(0)
    p = random_pose(rng)
    q = compose(Pose3.identity(), p)
    assert np.allclose(q.rotation, p.rotation, atol=1e-12)
    assert np.allclose(q.translation, p.translation, atol=1e-12)


def test_compose_inverse_roundtrip():
    rng = np.random.default_rng(1)
    p = random_pose(rng)
    q = compose(p, inverse(p))
    assert np.allclose(q.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(q.translation, 0.0, atol=1e-9)


def test_compose_translations():
    q = compose(translate(1, 0, 0), translate(0, 2, 0))
    assert np.allclose(q.translation, [1, 2, 0])
    assert np.allclose(q.rotation, np.eye(3))


def test_compose_associative_randomized():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a, b, c = (random_pose(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert np.allclose(left.rotation, right.rotation, atol=1e-9)
        assert np.allclose(left.translation, right.translation, atol=1e-9)


def test_pose3_rejects_non_orthonormal():
    bad = np.eye(3)
    bad[0, 0] = 1.1
    with pytest.raises(ValueError):
        Pose3(bad, np.zeros(3))


def test_transform_points_identity_and_translation():
    cloud = PointCloud(np.array([[0.0, 0, 0], [1, 2, 3]]), "sensor")
    same = transform_points(Pose3.identity(), cloud, "sensor", "world")
    assert np.array_equal(same.points, cloud.points)
    assert same.frame == "world"
    moved = transform_points(translate(1, 2, 3), cloud, "sensor", "world")
    assert np.allclose(moved.points[0], [1, 2, 3])


def test_transform_points_yaw_quarter_turn():
    cloud = PointCloud(np.array([[1.0, 0, 0]]), "sensor")
    pose = Pose3.from_yaw_xy(math.pi / 2, 0, 0)
    out = transform_points(pose, cloud, "sensor", "world")
    assert np.allclose(out.points[0], [0, 1, 0], atol=1e-9)


def test_transform_points_frame_mismatch():
    cloud = PointCloud(np.zeros((1, 3)), "world")
    with pytest.raises(FrameMismatchError):
        transform_points(Pose3.identity(), cloud, "sensor", "world")


def test_transform_points_rigidity():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-10, 10, (40, 3))
    cloud = PointCloud(pts, "sensor")
    pose = random_pose(rng)
    out = transform_points(pose, cloud, "sensor", "world").points
    d_in = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    d_out = np.linalg.norm(out[:, None] - out[None, :], axis=-1)
    assert np.abs(d_in - d_out).max() < 1e-9


def test_pose_delta_cases():
    assert pose_delta(Pose3.identity(), Pose3.identity()) == (0.0, 0.0)
    dist, ang = pose_delta(Pose3.identity(), translate(2, 0, 0))
    assert dist == pytest.approx(2.0) and ang == pytest.approx(0.0)
    dist, ang = pose_delta(Pose3.identity(), Pose3.from_yaw_xy(math.radians(5), 0, 0))
    assert dist == pytest.approx(0.0)
    assert ang == pytest.approx(math.radians(5), abs=1e-12)


def test_pose_delta_symmetric():
    rng = np.random.default_rng(4)
    for _ in range(20):
        a, b = random_pose(rng), random_pose(rng)
        assert pose_delta(a, b) == pytest.approx(pose_delta(b, a))


def test_project_to_pose2_cases():
    p2 = project_to_pose2(Pose3.identity())
    assert p2.yaw == 0.0 and np.allclose(p2.translation, 0.0)

    p = Pose3.from_yaw_xy(math.pi / 4, 1, 2, z=5)
    p2 = project_to_pose2(p)
    assert p2.yaw == pytest.approx(math.pi / 4)
    assert np.allclose(p2.translation, [1, 2])

    # roll only: the rotated x axis stays at +x, so yaw must be zero
    roll = Pose3(rot_x(0.7), np.array([3.0, -1.0, 2.0]))
    p2 = project_to_pose2(roll)
    assert p2.yaw == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(p2.translation, [3, -1])


def test_project_to_pose2_degenerate_pitch():
    import oracles
    vertical = Pose3(oracles.rot_y(-math.pi / 2), np.zeros(3))
    with pytest.raises(DegenerateYawError):
        project_to_pose2(vertical)


def test_pose2_normalization_and_ops():
    p = Pose2(3 * math.pi, np.array([1.0, 0.0]))
    assert -math.pi < p.yaw <= math.pi
    q = compose2(p, inverse2(p))
    assert q.yaw == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(q.translation, 0.0, atol=1e-12)
    assert normalize_angle(math.pi) == pytest.approx(math.pi)
    assert normalize_angle(-math.pi) == pytest.approx(math.pi)


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.nan, 0, 0]]), "sensor")
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), "")
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 2)), "sensor")

"""Rigid-body transforms shared by every pipeline stage.

Conventions: a pose T_AB = (R, t) maps points from frame B into frame A via
p_A = R @ p_B + t.  3D rotations are stored as 3x3 matrices because that is
how the pose files lay them out.  The 2D reduction keeps only yaw and the
x-y translation; roads are treated as locally planar so roll and pitch are
discarded on purpose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHONORMAL_TOL = 1e-9


class FrameMismatchError(ValueError):
    """A point cloud was handed to a transform for a different frame."""


class DegenerateYawError(ValueError):
    """Yaw is undefined: the rotated x axis is (almost) vertical."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Pose3:
    """Rigid transform in 3D: p' = rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {t.shape}")
        err = np.abs(r @ r.T - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"rotation not orthonormal (max residual {err:.3e})")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", _freeze(r))
        object.__setattr__(self, "translation", _freeze(t))

    @staticmethod
    def identity() -> "Pose3":
        return Pose3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw_xy(yaw: float, x: float, y: float, z: float = 0.0) -> "Pose3":
        c, s = math.cos(yaw), math.sin(yaw)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose3(r, np.array([x, y, z]))

    def matrix34(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])


@dataclass(frozen=True)
class Pose2:
    """Planar rigid transform: yaw in (-pi, pi], translation in meters."""

    yaw: float
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (2,):
            raise ValueError(f"translation must be a 2-vector, got {t.shape}")
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))
        object.__setattr__(self, "translation", _freeze(t))

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, np.zeros(2))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s], [s, c]])

    def apply(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return xy @ self.rotation().T + self.translation


@dataclass(frozen=True)
class PointCloud:
    """Points (N, 3) in meters, tagged with the frame they live in."""

    points: np.ndarray
    frame: str

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {p.shape}")
        if not np.isfinite(p).all():
            raise ValueError("point cloud contains non-finite coordinates")
        if not self.frame:
            raise ValueError("frame tag must be set")
        object.__setattr__(self, "points", _freeze(p))

    def __len__(self) -> int:
        return self.points.shape[0]


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def compose(a: Pose3, b: Pose3) -> Pose3:
    """Transform applying b first, then a."""
    return Pose3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Pose3) -> Pose3:
    rt = p.rotation.T
    return Pose3(rt, -(rt @ p.translation))


def compose2(a: Pose2, b: Pose2) -> Pose2:
    return Pose2(a.yaw + b.yaw, a.rotation() @ b.translation + a.translation)


def inverse2(p: Pose2) -> Pose2:
    rt = p.rotation().T
    return Pose2(-p.yaw, -(rt @ p.translation))


def transform_points(pose: Pose3, cloud: PointCloud, src: str, dst: str) -> PointCloud:
    """Map a cloud from frame `src` to frame `dst` with pose = T_dst_src.

    Raises FrameMismatchError when the cloud is not tagged `src`.
    """
    if cloud.frame != src:
        raise FrameMismatchError(f"cloud is in frame '{cloud.frame}', expected '{src}'")
    pts = cloud.points @ pose.rotation.T + pose.translation
    return PointCloud(pts, dst)


def pose_delta(a: Pose3, b: Pose3) -> tuple[float, float]:
    """Relative (distance, rotation angle) between two poses.

    Distance is the Euclidean norm of the relative translation, angle the
    axis-angle magnitude of the relative rotation; both symmetric in (a, b).
    """
    dist = float(np.linalg.norm(b.translation - a.translation))
    r = a.rotation.T @ b.rotation
    c = (np.trace(r) - 1.0) / 2.0
    angle = math.acos(min(1.0, max(-1.0, c)))
    return dist, angle


def project_to_pose2(p: Pose3) -> Pose2:
    """Collapse a 3D pose onto the ground plane.

    Yaw is the direction of the rotated x axis projected on x-y; fails when
    that projection is degenerate (x axis near vertical).
    """
    xa = p.rotation[:, 0]
    norm_xy = math.hypot(xa[0], xa[1])
    if norm_xy < 1e-6:
        raise DegenerateYawError("rotated x-axis is vertical; yaw undefined")
    yaw = math.atan2(xa[1], xa[0])
    return Pose2(yaw, p.translation[:2].copy())

"""Coarse intersection-candidate detection.

Six stages per detection timestep: keep road-labeled points, pool scans from
a keyframe window into the world frame, rasterize the pooled cloud to a
binary bird's-eye-view grid, close/open it into a road-occupancy mask, thin
that to the road centerline, and pick corner-response maxima on the
centerline as intersection candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import imageops
from .geometry import Pose3, PointCloud, pose_delta, transform_points
from .ingest import SemanticScan

WORLD_FRAME = "world"


def sensor_frame(timestep: int) -> str:
    return f"sensor:{timestep}"


@dataclass(frozen=True)
class DetectorParams:
    """Tunables of the detector; lengths in meters, radii in pixels.

    The pixel radii and the suppression radius default to values derived
    from the metric parameters: closing must bridge the gaps between scan
    rings, opening must erase sub-road-scale blobs without biting into a
    lane, and two raw corners of one physical junction must not both
    survive suppression.
    """

    delta_p: float = 2.0                    # keyframe distance threshold, m
    delta_a: float = math.radians(5.0)      # keyframe angle threshold, rad
    half_window: int = 20                   # keyframes pooled on each side
    roi_size: float = 120.0                 # BEV window side, m
    resolution: float = 0.16                # m per pixel
    min_points: int = 5                     # points per cell to set a pixel
    inner_radius: float = 10.0              # merge/refine disk radius, m
    outer_radius: float = 40.0              # branch annulus outer radius, m
    close_radius: int | None = None
    open_radius: int | None = None
    harris_k: float = 0.04
    harris_rel_threshold: float = 0.2
    nms_radius: int | None = None
    sub_pixel: bool = True

    def __post_init__(self):
        if self.close_radius is None:
            object.__setattr__(self, "close_radius",
                               math.ceil(1.6 / self.resolution))
        if self.open_radius is None:
            object.__setattr__(self, "open_radius",
                               math.ceil(1.0 / self.resolution))
        if self.nms_radius is None:
            object.__setattr__(self, "nms_radius",
                               math.ceil(self.inner_radius / self.resolution))
        for name in ("delta_p", "delta_a", "roi_size", "resolution",
                     "inner_radius", "outer_radius", "harris_k",
                     "harris_rel_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("half_window", "min_points", "close_radius",
                     "open_radius", "nms_radius"):
            if getattr(self, name) < 0 or (name != "half_window"
                                           and getattr(self, name) == 0):
                raise ValueError(f"{name} must be strictly positive")

    @property
    def grid_side(self) -> int:
        # Cell indices run 0..floor(S/r); the epsilon absorbs binary
        # representation error in S/r (120/0.16 must count as exactly 750).
        return int(math.floor(self.roi_size / self.resolution + 1e-9)) + 1

    @property
    def inner_radius_px(self) -> float:
        return self.inner_radius / self.resolution

    @property
    def outer_radius_px(self) -> float:
        return self.outer_radius / self.resolution


@dataclass(frozen=True)
class BinaryGrid:
    """Square binary raster over the ROI, axis-aligned with the world frame.

    bits[v, u]: u counts columns along world +x, v counts rows along world
    -y, so the raster reads like a map viewed from above.  origin_world is
    the world position of the (u=0, v=0) cell corner (min x, max y); a world
    point falls in the half-open cell [u*r, (u+1)*r) x (-(v+1)*r, -v*r].
    """

    bits: np.ndarray
    origin_world: np.ndarray
    resolution: float

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError(f"grid must be square, got {b.shape}")
        o = np.asarray(self.origin_world, dtype=np.float64)
        if o.shape != (2,):
            raise ValueError("origin_world must be a 2-vector")
        b.flags.writeable = False
        o.flags.writeable = False
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "origin_world", o)

    @property
    def side(self) -> int:
        return self.bits.shape[0]

    def world_to_pixel(self, xy: np.ndarray) -> np.ndarray:
        """Continuous (u, v) image coordinates of world points (N, 2)."""
        xy = np.asarray(xy, dtype=np.float64)
        u = (xy[..., 0] - self.origin_world[0]) / self.resolution
        v = (self.origin_world[1] - xy[..., 1]) / self.resolution
        return np.stack([u, v], axis=-1)


@dataclass(frozen=True)
class KeyframeEntry:
    timestep: int
    pose: Pose3
    road_cloud_world: PointCloud


@dataclass(frozen=True)
class KeyframeWindow:
    """Road clouds of the keyframes pooled around one detection timestep."""

    frames: tuple[KeyframeEntry, ...]
    center_index: int

    @property
    def center(self) -> KeyframeEntry:
        return self.frames[self.center_index]


@dataclass(frozen=True)
class CandidateSet:
    """Sub-pixel candidate positions (u, v) in the grid of one timestep."""

    points: np.ndarray
    timestep: int

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]


def filter_road_points(scan: SemanticScan, road_class: int) -> PointCloud:
    """Points of the scan labeled exactly `road_class`, order preserved."""
    keep = scan.labels == road_class
    return PointCloud(scan.cloud.points[keep], scan.cloud.frame)


def select_keyframes(poses: list[Pose3], params: DetectorParams) -> list[int]:
    """Indices of frames whose pose moved enough since the last keyframe.

    The first frame is always kept; a frame is kept when it is at least
    delta_p away from or delta_a rotated against the previous keyframe.
    """
    if not poses:
        raise ValueError("pose stream is empty")
    keyframes = [0]
    for i in range(1, len(poses)):
        dist, angle = pose_delta(poses[keyframes[-1]], poses[i])
        if dist >= params.delta_p or angle >= params.delta_a:
            keyframes.append(i)
    return keyframes


def build_window(keyframes: list[KeyframeEntry], center: int,
                 params: DetectorParams, causal: bool = False) -> KeyframeWindow:
    """Slice up to half_window keyframes on each side of `center`.

    The window is truncated at the sequence boundaries; in causal mode only
    past keyframes are pooled (no lookahead latency).
    """
    if not 0 <= center < len(keyframes):
        raise IndexError("center keyframe index out of range")
    lo = max(0, center - params.half_window)
    hi = center if causal else min(len(keyframes) - 1, center + params.half_window)
    return KeyframeWindow(tuple(keyframes[lo:hi + 1]), center - lo)


def road_cloud_to_world(scan: SemanticScan, pose: Pose3, road_class: int,
                        timestep: int) -> PointCloud:
    road = filter_road_points(scan, road_class)
    return transform_points(pose, road, sensor_frame(timestep), WORLD_FRAME)


def rasterize_bev(window: KeyframeWindow, params: DetectorParams) -> BinaryGrid:
    """Project the pooled road cloud into the binary BEV grid.

    A pixel is set when at least min_points pooled points fall in its cell;
    the threshold discards sparse cells that are usually outliers or
    segmentation false positives.  z is dropped (roads are locally flat).
    """
    side = params.grid_side
    cx, cy = window.center.pose.translation[:2]
    origin = np.array([cx - params.roi_size / 2.0, cy + params.roi_size / 2.0])
    counts = np.zeros(side * side, dtype=np.int64)
    for entry in window.frames:
        pts = entry.road_cloud_world.points
        if pts.shape[0] == 0:
            continue
        u = np.floor((pts[:, 0] - origin[0]) / params.resolution).astype(np.int64)
        v = np.floor((origin[1] - pts[:, 1]) / params.resolution).astype(np.int64)
        ok = (u >= 0) & (u < side) & (v >= 0) & (v < side)
        if ok.any():
            counts += np.bincount(v[ok] * side + u[ok], minlength=side * side)
    bits = (counts >= params.min_points).reshape(side, side)
    return BinaryGrid(bits, origin, params.resolution)


def infer_occupancy(bev: BinaryGrid, params: DetectorParams) -> BinaryGrid:
    """Close then open the BEV raster into a continuous road-occupancy mask."""
    occ = imageops.binary_open(
        imageops.binary_close(bev.bits, params.close_radius),
        params.open_radius)
    return BinaryGrid(occ, bev.origin_world, bev.resolution)


def extract_centerline(occ: BinaryGrid) -> BinaryGrid:
    """Thin the occupancy mask to its one-pixel-wide centerline."""
    return BinaryGrid(imageops.thin(occ.bits), occ.origin_world, occ.resolution)


def detect_corners(cen: BinaryGrid, params: DetectorParams,
                   timestep: int = 0) -> CandidateSet:
    """Corner-response maxima of the centerline image.

    Responses around skeleton terminations are masked first: a free line end
    scores like a corner but cannot be a crossing.  Surviving maxima are
    thresholded relative to the global maximum (with an absolute floor for
    rasterization noise) and thinned by radius suppression.
    """
    resp = imageops.harris_response(cen.bits, k=params.harris_k)
    resp = imageops.suppress_line_ends(resp, cen.bits)
    pts = imageops.find_peaks(resp, params.harris_rel_threshold,
                              params.nms_radius, sub_pixel=params.sub_pixel)
    return CandidateSet(pts, timestep)

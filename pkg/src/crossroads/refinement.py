"""Branch-based candidate verification and position correction.

Around each candidate the centerline is split into branches: connected
pixel runs inside an annulus between the inner and outer radii.  A
candidate with at least three branches is an intersection; its position is
corrected to the inner-disk pixel minimizing the summed squared
perpendicular distances to the branch approximation lines, then mapped
from the grid into the sensor frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import imageops
from .detection import BinaryGrid, CandidateSet, DetectorParams
from .geometry import Pose3, project_to_pose2

# A component "touches" the inner circle when its closest pixel is within
# one diagonal step of it.
INNER_TOUCH_TOL = 1.5


class DegenerateGeometryError(ValueError):
    """All branch lines are mutually parallel; the minimum is not unique."""


@dataclass(frozen=True)
class Branch:
    """One road arm in the annulus, approximated by a radial line.

    The line passes through `start` (the pixel nearest the inner circle)
    and `center` (the mean of all branch pixels).
    """

    pixels: np.ndarray   # (N, 2) integer (u, v)
    start: np.ndarray    # (2,) float
    center: np.ndarray   # (2,) float

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        s = np.asarray(self.start, dtype=np.float64)
        c = np.asarray(self.center, dtype=np.float64)
        px.flags.writeable = False
        s.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "center", c)

    def direction(self) -> np.ndarray:
        d = self.center - self.start
        return d / np.linalg.norm(d)

    def line(self) -> tuple[float, float, float]:
        """Unit-normal line coefficients (nx, ny, c): nx*u + ny*v = c."""
        dx, dy = self.direction()
        nx, ny = -dy, dx
        c = nx * self.start[0] + ny * self.start[1]
        return float(nx), float(ny), float(c)


@dataclass(frozen=True)
class RefinedIntersection:
    """A verified intersection in grid and sensor coordinates."""

    pixel_pos: np.ndarray   # (2,) (u, v)
    lidar_pos: np.ndarray   # (2,) meters in the sensor frame
    branch_count: int
    residual: float         # summed squared line distances at pixel_pos, px^2
    degenerate: bool = False

    def __post_init__(self):
        p = np.asarray(self.pixel_pos, dtype=np.float64)
        l = np.asarray(self.lidar_pos, dtype=np.float64)
        p.flags.writeable = False
        l.flags.writeable = False
        object.__setattr__(self, "pixel_pos", p)
        object.__setattr__(self, "lidar_pos", l)


def merge_close_candidates(cands: CandidateSet, inner_radius: float,
                           resolution: float) -> CandidateSet:
    """Fuse candidate groups closer than the inner-disk radius.

    Single-linkage groups within inner_radius/resolution pixels collapse to
    their centroid; repeated until no two outputs are that close (one pass
    cannot guarantee it because centroids move).
    """
    thr2 = (inner_radius / resolution) ** 2
    pts = [tuple(p) for p in np.asarray(cands.points)]
    pts.sort()
    while True:
        n = len(pts)
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        merged_any = False
        for i in range(n):
            for j in range(i + 1, n):
                d2 = (pts[i][0] - pts[j][0]) ** 2 + (pts[i][1] - pts[j][1]) ** 2
                if d2 < thr2:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[ri] = rj
                        merged_any = True
        if not merged_any:
            break
        groups: dict[int, list] = {}
        for i in range(n):
            groups.setdefault(find(i), []).append(pts[i])
        pts = sorted(
            tuple(np.mean(np.asarray(g), axis=0)) for g in groups.values())
    return CandidateSet(np.asarray(pts, dtype=np.float64).reshape(-1, 2),
                        cands.timestep)


def annulus_inside_fraction(cand: np.ndarray, inner_px: float, outer_px: float,
                            shape: tuple[int, int]) -> float:
    """Fraction of the annulus pixel lattice that lies inside the grid."""
    cu, cv = float(cand[0]), float(cand[1])
    u = np.arange(math.floor(cu - outer_px), math.ceil(cu + outer_px) + 1)
    v = np.arange(math.floor(cv - outer_px), math.ceil(cv + outer_px) + 1)
    uu, vv = np.meshgrid(u, v)
    d2 = (uu - cu) ** 2 + (vv - cv) ** 2
    ring = (d2 > inner_px ** 2) & (d2 < outer_px ** 2)
    total = int(ring.sum())
    if total == 0:
        return 0.0
    inside = ring & (uu >= 0) & (uu < shape[1]) & (vv >= 0) & (vv < shape[0])
    return int(inside.sum()) / total


def segment_branches(cen: BinaryGrid, cand: np.ndarray, others: np.ndarray,
                     inner_radius: float, outer_radius: float,
                     resolution: float) -> list[Branch]:
    """Extract the road branches around a candidate.

    Branches are 8-connected components of the centerline restricted to the
    open annulus; a component must reach the inner circle to count, and its
    pixels are cut where they enter another candidate's inner disk (a branch
    ends before the next intersection).
    """
    a_i = inner_radius / resolution
    a_o = outer_radius / resolution
    cu, cv = float(cand[0]), float(cand[1])
    h, w = cen.bits.shape
    u0, u1 = max(0, math.floor(cu - a_o)), min(w - 1, math.ceil(cu + a_o))
    v0, v1 = max(0, math.floor(cv - a_o)), min(h - 1, math.ceil(cv + a_o))
    if u0 > u1 or v0 > v1:
        return []
    crop = cen.bits[v0:v1 + 1, u0:u1 + 1]
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    d2 = (uu - cu) ** 2 + (vv - cv) ** 2
    ring = crop & (d2 > a_i * a_i) & (d2 < a_o * a_o)
    others = np.asarray(others, dtype=np.float64).reshape(-1, 2)
    if len(others):
        blocked = np.zeros_like(ring)
        for ou, ov in others:
            blocked |= (uu - ou) ** 2 + (vv - ov) ** 2 < a_i * a_i
        ring = ring & ~blocked
    labels, n = imageops.label_components(ring)
    branches = []
    for comp in range(1, n + 1):
        mask = labels == comp
        dist = np.sqrt(d2[mask])
        if dist.min() > a_i + INNER_TOUCH_TOL:
            continue
        us = uu[mask].astype(np.float64)
        vs = vv[mask].astype(np.float64)
        order = np.lexsort((us, vs, np.sqrt((us - cu) ** 2 + (vs - cv) ** 2)))[0]
        start = np.array([us[order], vs[order]])
        center = np.array([us.mean(), vs.mean()])
        if np.linalg.norm(center - start) < 1e-9:
            continue  # single-pixel fragment: no line direction
        branches.append(Branch(np.stack([uu[mask], vv[mask]], axis=1),
                               start, center))
    branches.sort(key=lambda b: (b.start[1], b.start[0], b.center[1], b.center[0]))
    return branches


def classify(branches: list[Branch]) -> bool:
    """A candidate with three or more branches is an intersection."""
    return len(branches) >= 3


def refine_position(branches: list[Branch], cand: np.ndarray,
                    inner_radius: float, resolution: float,
                    shape: tuple[int, int] | None = None,
                    ) -> tuple[np.ndarray, float]:
    """Exhaustive minimizer of the summed squared branch-line distances.

    Searches every lattice pixel of the open inner disk around the
    candidate; ties break toward the pixel closest to the candidate, then
    lexicographically by (row, col).  Raises DegenerateGeometryError when
    all branch lines are mutually parallel (within 1e-6 rad), where the
    minimizer is a whole line.
    """
    if not branches:
        raise ValueError("refine_position needs at least one branch")
    dirs = [b.direction() for b in branches]
    parallel = all(
        abs(dirs[i][0] * dirs[j][1] - dirs[i][1] * dirs[j][0]) < 1e-6
        for i in range(len(dirs)) for j in range(i + 1, len(dirs)))
    if len(dirs) > 1 and parallel:
        raise DegenerateGeometryError("all branch lines are parallel")
    a_px = inner_radius / resolution
    cu, cv = float(cand[0]), float(cand[1])
    u = np.arange(math.ceil(cu - a_px), math.floor(cu + a_px) + 1, dtype=np.int64)
    v = np.arange(math.ceil(cv - a_px), math.floor(cv + a_px) + 1, dtype=np.int64)
    uu, vv = np.meshgrid(u.astype(np.float64), v.astype(np.float64))
    mask = (uu - cu) * (uu - cu) + (vv - cv) * (vv - cv) < a_px * a_px
    if shape is not None:
        mask &= (uu >= 0) & (uu < shape[1]) & (vv >= 0) & (vv < shape[0])
    if not mask.any():
        raise ValueError("refinement domain is empty")
    us, vs = uu[mask], vv[mask]
    obj = np.zeros_like(us)
    for b in branches:
        nx, ny, c = b.line()
        t = nx * us + ny * vs - c
        obj += t * t
    d2 = (us - cu) * (us - cu) + (vs - cv) * (vs - cv)
    best = np.lexsort((us, vs, d2, obj))[0]
    return np.array([us[best], vs[best]]), float(obj[best])


def to_lidar_frame(p_img: np.ndarray, lidar_pose: Pose3,
                   params: DetectorParams) -> np.ndarray:
    """Map a grid position to planar sensor-frame meters.

    Scales pixels to meters, recenters on the grid middle (where the sensor
    sits), flips the v axis back to +y, and unrotates the sensor yaw.
    """
    yaw = project_to_pose2(lidar_pose).yaw
    half = params.roi_size / 2.0
    m = np.asarray(p_img, dtype=np.float64) * params.resolution - half
    flipped = np.array([m[0], -m[1]])
    c, s = math.cos(yaw), math.sin(yaw)
    rot_t = np.array([[c, s], [-s, c]])
    return rot_t @ flipped


def refine_timestep(cen: BinaryGrid, cands: CandidateSet,
                    params: DetectorParams, lidar_pose: Pose3,
                    ) -> list[RefinedIntersection]:
    """Merge, verify, and correct one timestep's candidates.

    Candidates whose annulus lies mostly outside the grid cannot be
    classified reliably and are dropped; they sit outside the relevant
    evaluation zone anyway.
    """
    merged = merge_close_candidates(cands, params.inner_radius, params.resolution)
    results = []
    pts = merged.points
    for i in range(len(merged)):
        cand = pts[i]
        if annulus_inside_fraction(cand, params.inner_radius_px,
                                   params.outer_radius_px,
                                   cen.bits.shape) < 0.5:
            continue
        others = np.delete(pts, i, axis=0)
        branches = segment_branches(cen, cand, others, params.inner_radius,
                                    params.outer_radius, params.resolution)
        if not classify(branches):
            continue
        degenerate = False
        try:
            pixel, residual = refine_position(branches, cand, params.inner_radius,
                                              params.resolution, cen.bits.shape)
        except DegenerateGeometryError:
            pixel = np.round(cand)
            residual = 0.0
            for b in branches:
                nx, ny, c = b.line()
                t = nx * pixel[0] + ny * pixel[1] - c
                residual += t * t
            degenerate = True
        lidar = to_lidar_frame(pixel, lidar_pose, params)
        results.append(RefinedIntersection(pixel, lidar, len(branches),
                                           residual, degenerate))
    return results

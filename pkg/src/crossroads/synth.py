"""Synthetic scene generator: the desk-scale ground-truth oracle.

Builds a flat world of rectangular road bands flanked by sidewalk bands,
drives a simulated sensor along a trajectory, and emits labeled scans in
the sensor frame together with odometry-style poses, georeferenced
ground-truth poses, and the road graph with true junction degrees.  Scenes
write out in the exact interchange formats the parsers read, so synthetic
data exercises the same entry points as real data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ingest
from .geometry import Pose2, Pose3, PointCloud
from .ingest import (DEFAULT_LABEL_MAP, GraphNode, LabelMap, LocalProjection,
                     RoadGraph, SemanticScan)


class SceneError(ValueError):
    """The scene description is inconsistent (e.g. trajectory off-road)."""


@dataclass(frozen=True)
class RoadSpec:
    polyline: np.ndarray   # (M, 2) world meters
    width: float

    def __post_init__(self):
        p = np.asarray(self.polyline, dtype=np.float64).reshape(-1, 2)
        if p.shape[0] < 2:
            raise SceneError("road polyline needs at least two vertices")
        if self.width <= 0:
            raise SceneError("road width must be positive")
        p.flags.writeable = False
        object.__setattr__(self, "polyline", p)


@dataclass(frozen=True)
class SceneSpec:
    roads: tuple
    trajectory: np.ndarray        # (K, 2) polyline the vehicle follows
    density: float = 30.0         # points per m^2 per scan
    scan_range: float = 60.0
    sidewalk_widths: tuple = (2.0, 2.0)  # band width left/right of heading
    speed: float = 10.0           # m/s along the trajectory
    scan_rate: float = 10.0       # Hz
    seed: int = 0
    z_jitter: float = 0.05
    drop_sector_deg: float = 0.0  # emulate per-scan occlusion when > 0
    anchor_lat: float = 48.0
    anchor_lon: float = 9.0

    def __post_init__(self):
        t = np.asarray(self.trajectory, dtype=np.float64).reshape(-1, 2)
        if t.shape[0] < 2:
            raise SceneError("trajectory needs at least two vertices")
        if self.density <= 0 or self.speed <= 0 or self.scan_rate <= 0:
            raise SceneError("density, speed and scan_rate must be positive")
        t.flags.writeable = False
        object.__setattr__(self, "trajectory", t)
        object.__setattr__(self, "roads", tuple(self.roads))


@dataclass(frozen=True)
class SyntheticSequence:
    scans: list
    poses: list                   # odometry-style, first frame = identity
    graph: RoadGraph
    gt_poses: dict                # timestep -> Pose2 in the projected frame
    projection: LocalProjection
    graph_latlon: dict            # node id -> (lat, lon)
    graph_edges: tuple
    gt_records: tuple             # (timestep, lat, lon, yaw_deg)
    label_map: LabelMap = field(default=DEFAULT_LABEL_MAP)


def _segments(roads) -> list[tuple[np.ndarray, np.ndarray, float]]:
    segs = []
    for road in roads:
        pl = road.polyline
        for i in range(pl.shape[0] - 1):
            if np.linalg.norm(pl[i + 1] - pl[i]) > 1e-12:
                segs.append((pl[i], pl[i + 1], road.width))
    return segs


def _point_segment_dist(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(pts - proj, axis=1)


def _dist_to_roads(pts: np.ndarray, segs) -> np.ndarray:
    """Distance beyond each segment's half width, minimized over segments."""
    best = np.full(pts.shape[0], np.inf)
    for a, b, width in segs:
        best = np.minimum(best, _point_segment_dist(pts, a, b) - width / 2.0)
    return best


def _walk_trajectory(spec: SceneSpec) -> list[tuple[np.ndarray, float]]:
    """Equally spaced (position, yaw) samples along the trajectory."""
    pl = spec.trajectory
    seg_vecs = pl[1:] - pl[:-1]
    seg_lens = np.linalg.norm(seg_vecs, axis=1)
    total = float(seg_lens.sum())
    step = spec.speed / spec.scan_rate
    n_frames = int(math.floor(total / step + 1e-9)) + 1
    cum = np.concatenate([[0.0], np.cumsum(seg_lens)])
    out = []
    for i in range(n_frames):
        s = min(i * step, total)
        j = int(np.searchsorted(cum, s, side="right") - 1)
        j = min(j, len(seg_lens) - 1)
        frac = (s - cum[j]) / seg_lens[j]
        pos = pl[j] + frac * seg_vecs[j]
        yaw = math.atan2(seg_vecs[j][1], seg_vecs[j][0])
        out.append((pos, yaw))
    return out


def _sample_scan(spec: SceneSpec, segs, pos: np.ndarray, yaw: float,
                 timestep: int, road_id: int, sidewalk_id: int) -> SemanticScan:
    rng = np.random.default_rng(
        np.random.SeedSequence(spec.seed, spawn_key=(timestep,)))
    xs, labels = [], []
    for a, b, width in segs:
        length = float(np.linalg.norm(b - a))
        d = (b - a) / length
        n = np.array([-d[1], d[0]])
        cnt = int(math.floor(spec.density * length * width + 0.5))
        t = rng.uniform(0.0, length, cnt)
        off = rng.uniform(-width / 2.0, width / 2.0, cnt)
        xs.append(a + t[:, None] * d + off[:, None] * n)
        labels.append(np.full(cnt, road_id))
        for sign, sw in zip((1.0, -1.0), spec.sidewalk_widths):
            if sw <= 0:
                continue
            cnt2 = int(math.floor(spec.density * length * sw + 0.5))
            t2 = rng.uniform(0.0, length, cnt2)
            lo = sign * width / 2.0
            hi = sign * (width / 2.0 + sw)
            off2 = rng.uniform(min(lo, hi), max(lo, hi), cnt2)
            band = a + t2[:, None] * d + off2[:, None] * n
            keep = _dist_to_roads(band, segs) > 0  # not inside any road
            xs.append(band[keep])
            labels.append(np.full(int(keep.sum()), sidewalk_id))
    pts = np.concatenate(xs, axis=0)
    labels = np.concatenate(labels)
    keep = np.linalg.norm(pts - pos, axis=1) <= spec.scan_range
    pts, labels = pts[keep], labels[keep]
    if spec.drop_sector_deg > 0:
        theta0 = rng.uniform(0.0, 2.0 * math.pi)
        ang = np.arctan2(pts[:, 1] - pos[1], pts[:, 0] - pos[0])
        half = math.radians(spec.drop_sector_deg) / 2.0
        gap = np.abs((ang - theta0 + math.pi) % (2.0 * math.pi) - math.pi)
        pts, labels = pts[gap > half], labels[gap > half]
    z = rng.uniform(-spec.z_jitter, spec.z_jitter, pts.shape[0])
    c, s = math.cos(yaw), math.sin(yaw)
    rot_t = np.array([[c, s], [-s, c]])
    local = (pts - pos) @ rot_t.T
    cloud = np.column_stack([local, z])
    return SemanticScan(PointCloud(cloud, f"sensor:{timestep}"), labels)


def _build_graph(spec: SceneSpec) -> tuple[dict, tuple]:
    """Split road segments at mutual crossings; nodes get true degrees."""
    segs = [(a, b) for a, b, _ in _segments(spec.roads)]
    cuts: list[list[float]] = [[0.0, 1.0] for _ in segs]
    for i in range(len(segs)):
        for j in range(i + 1, len(segs)):
            p0, p1 = segs[i]
            q0, q1 = segs[j]
            r, s = p1 - p0, q1 - q0
            denom = r[0] * s[1] - r[1] * s[0]
            if abs(denom) < 1e-12:
                continue  # parallel; colinear overlap unsupported
            qp = q0 - p0
            t = (qp[0] * s[1] - qp[1] * s[0]) / denom
            u = (qp[0] * r[1] - qp[1] * r[0]) / denom
            eps = 1e-9
            if -eps <= t <= 1 + eps and -eps <= u <= 1 + eps:
                cuts[i].append(min(1.0, max(0.0, t)))
                cuts[j].append(min(1.0, max(0.0, u)))
    node_key_to_xy: dict[tuple, np.ndarray] = {}
    edges_keys: set[tuple] = set()

    def key_of(p: np.ndarray) -> tuple:
        k = (round(p[0] * 1e6), round(p[1] * 1e6))
        node_key_to_xy.setdefault(k, p)
        return k

    for (p0, p1), ts in zip(segs, cuts):
        ts = sorted(set(round(t, 12) for t in ts))
        pts = [p0 + t * (p1 - p0) for t in ts]
        for a, b in zip(pts, pts[1:]):
            ka, kb = key_of(a), key_of(b)
            if ka != kb:
                edges_keys.add(tuple(sorted((ka, kb))))
    keys = sorted(node_key_to_xy)
    key_to_id = {k: i + 1 for i, k in enumerate(keys)}
    nodes_xy = {key_to_id[k]: node_key_to_xy[k] for k in keys}
    edges = tuple(sorted((key_to_id[a], key_to_id[b]) for a, b in edges_keys))
    return nodes_xy, edges


def generate_sequence(spec: SceneSpec) -> SyntheticSequence:
    """Simulate the full sequence described by the spec.

    Fails when the trajectory leaves every road.  Identical specs produce
    bit-identical sequences.
    """
    segs = _segments(spec.roads)
    walk = _walk_trajectory(spec)
    traj_pts = np.array([p for p, _ in walk])
    if (_dist_to_roads(traj_pts, segs) > 1e-9).any():
        raise SceneError("trajectory leaves the road network")
    road_id = DEFAULT_LABEL_MAP.road_id
    sidewalk_id = DEFAULT_LABEL_MAP.id_of("sidewalk")
    scans = []
    world_poses = []
    for k, (pos, yaw) in enumerate(walk):
        scans.append(_sample_scan(spec, segs, pos, yaw, k, road_id, sidewalk_id))
        world_poses.append(Pose3.from_yaw_xy(yaw, pos[0], pos[1]))
    # odometry poses are expressed relative to the first frame
    first = world_poses[0]
    first_inv = Pose3(first.rotation.T, -(first.rotation.T @ first.translation))
    poses = [Pose3(first_inv.rotation @ p.rotation,
                   first_inv.rotation @ p.translation + first_inv.translation)
             for p in world_poses]
    projection = LocalProjection(spec.anchor_lat, spec.anchor_lon)
    nodes_xy, edges = _build_graph(spec)
    graph_latlon = {}
    graph_nodes = {}
    for nid, xy in nodes_xy.items():
        lat, lon = projection.inverse(xy[0], xy[1])
        lat, lon = float(lat), float(lon)
        graph_latlon[nid] = (lat, lon)
        x, y = projection.forward(lat, lon)
        graph_nodes[nid] = GraphNode(lat, lon, np.array([float(x), float(y)]))
    graph = RoadGraph(graph_nodes, frozenset(edges))
    gt_records = []
    gt_poses = {}
    for k, (pos, yaw) in enumerate(walk):
        lat, lon = projection.inverse(pos[0], pos[1])
        gt_records.append((k, float(lat), float(lon), math.degrees(yaw)))
        gt_poses[k] = Pose2(yaw, pos.copy())
    return SyntheticSequence(scans, poses, graph, gt_poses, projection,
                             graph_latlon, edges, tuple(gt_records))


def write_scene(seq: SyntheticSequence, outdir) -> dict:
    """Write a sequence in the interchange formats; returns the paths."""
    outdir = Path(outdir)
    scans_dir = outdir / "scans"
    labels_dir = outdir / "labels"
    scans_dir.mkdir(parents=True, exist_ok=True)
    labels_dir.mkdir(parents=True, exist_ok=True)
    for k, scan in enumerate(seq.scans):
        ingest.write_scan(scans_dir / f"{k:06d}.bin", scan.cloud)
        ingest.write_labels(labels_dir / f"{k:06d}.label", scan.labels)
    paths = {
        "scan_dir": scans_dir,
        "label_dir": labels_dir,
        "pose_file": outdir / "poses.txt",
        "gt_pose_file": outdir / "gt_poses.txt",
        "graph_file": outdir / "graph.txt",
        "label_map_file": outdir / "label_map.txt",
    }
    ingest.write_poses(paths["pose_file"], seq.poses)
    ingest.write_gt_poses(paths["gt_pose_file"], seq.gt_records)
    ingest.write_road_graph(paths["graph_file"], seq.graph_latlon, seq.graph_edges)
    ingest.write_label_map(paths["label_map_file"], seq.label_map)
    return paths


def cross_scene(road_width: float = 8.0, density: float = 30.0,
                speed: float = 10.0, half_length: float = 120.0,
                traj_extent: float = 60.0, seed: int = 0,
                **kwargs) -> SceneSpec:
    """Two perpendicular roads crossing at the origin; drive along x."""
    roads = (
        RoadSpec(np.array([[-half_length, 0.0], [half_length, 0.0]]), road_width),
        RoadSpec(np.array([[0.0, -half_length], [0.0, half_length]]), road_width),
    )
    traj = np.array([[-traj_extent, 0.0], [traj_extent, 0.0]])
    return SceneSpec(roads, traj, density=density, speed=speed, seed=seed, **kwargs)


def tee_scene(road_width: float = 8.0, density: float = 30.0,
              speed: float = 10.0, half_length: float = 120.0,
              traj_extent: float = 60.0, seed: int = 0,
              **kwargs) -> SceneSpec:
    """A through road with one stem to +y; junction degree is three."""
    roads = (
        RoadSpec(np.array([[-half_length, 0.0], [half_length, 0.0]]), road_width),
        RoadSpec(np.array([[0.0, 0.0], [0.0, half_length]]), road_width),
    )
    traj = np.array([[-traj_extent, 0.0], [traj_extent, 0.0]])
    return SceneSpec(roads, traj, density=density, speed=speed, seed=seed, **kwargs)


def straight_scene(angle_deg: float = 0.0, road_width: float = 8.0,
                   density: float = 30.0, speed: float = 10.0,
                   half_length: float = 120.0, traj_extent: float = 60.0,
                   seed: int = 0, **kwargs) -> SceneSpec:
    """A single straight road through the origin at the given heading."""
    d = np.array([math.cos(math.radians(angle_deg)),
                  math.sin(math.radians(angle_deg))])
    roads = (RoadSpec(np.array([-half_length * d, half_length * d]), road_width),)
    traj = np.array([-traj_extent * d, traj_extent * d])
    return SceneSpec(roads, traj, density=density, speed=speed, seed=seed, **kwargs)


def curve_scene(radius: float = 150.0, arc_deg: float = 90.0,
                road_width: float = 8.0, density: float = 30.0,
                speed: float = 10.0, traj_arc_deg: float | None = None,
                seed: int = 0, **kwargs) -> SceneSpec:
    """A gently curved road (polyline arc) centered on the origin heading."""
    half = math.radians(arc_deg) / 2.0
    n = max(8, int(arc_deg / 3.0))  # ~3 degrees per polyline piece
    angs = np.linspace(-half, half, n + 1)
    # circle center at (0, radius): arc passes through origin heading +x
    pl = np.column_stack([radius * np.sin(angs), radius * (1.0 - np.cos(angs))])
    roads = (RoadSpec(pl, road_width),)
    t_half = math.radians(traj_arc_deg if traj_arc_deg is not None else arc_deg * 0.6) / 2.0
    t_angs = np.linspace(-t_half, t_half, max(8, int(math.degrees(t_half) * 2)) + 1)
    traj = np.column_stack([radius * np.sin(t_angs), radius * (1.0 - np.cos(t_angs))])
    return SceneSpec(roads, traj, density=density, speed=speed, seed=seed, **kwargs)

"""File-format adapters: scans, labels, poses, road graphs, label maps.

Binary layouts follow the common LiDAR benchmark conventions: scans are
little-endian float32 quadruples (x, y, z, intensity), labels one
little-endian uint32 per point with the semantic class in the lower 16
bits, odometry poses 12 whitespace-separated floats per line (row-major
3x4).  Road graphs and ground-truth poses are plain-text formats defined
here; writers for every format live alongside the readers so synthetic
data flows through the same entry points as real data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose2, Pose3, PointCloud, compose, project_to_pose2

EARTH_RADIUS = 6378137.0

ROAD = "road"
CONFUSION_CLASSES = ("sidewalk", "parking", "other-ground")

# Semantic class ids of the common benchmark labeling; ships as the default
# label-map config.
DEFAULT_LABEL_MAP_TABLE = {
    0: "unlabeled", 1: "outlier",
    10: "car", 11: "bicycle", 13: "bus", 15: "motorcycle", 16: "on-rails",
    18: "truck", 20: "other-vehicle",
    30: "person", 31: "bicyclist", 32: "motorcyclist",
    40: "road", 44: "parking", 48: "sidewalk", 49: "other-ground",
    50: "building", 51: "fence", 52: "other-structure", 60: "lane-marking",
    70: "vegetation", 71: "trunk", 72: "terrain",
    80: "pole", 81: "traffic-sign", 99: "other-object",
    252: "moving-car", 253: "moving-bicyclist", 254: "moving-person",
    255: "moving-motorcyclist", 256: "moving-on-rails", 257: "moving-bus",
    258: "moving-truck", 259: "moving-other-vehicle",
}


class ParseError(ValueError):
    """Input file violates its declared format."""


@dataclass(frozen=True)
class LabelMap:
    """Class id -> name table; names must be unique."""

    table: dict

    def __post_init__(self):
        names = list(self.table.values())
        if len(set(names)) != len(names):
            raise ParseError("label map has duplicate class names")
        for name in (ROAD, *CONFUSION_CLASSES):
            if name not in names:
                raise ParseError(f"label map is missing required class '{name}'")

    def id_of(self, name: str) -> int:
        for cid, cname in self.table.items():
            if cname == name:
                return cid
        raise KeyError(name)

    @property
    def road_id(self) -> int:
        return self.id_of(ROAD)

    @property
    def confusion_ids(self) -> tuple[int, ...]:
        return tuple(self.id_of(n) for n in CONFUSION_CLASSES)


DEFAULT_LABEL_MAP = LabelMap(DEFAULT_LABEL_MAP_TABLE)


@dataclass(frozen=True)
class SemanticScan:
    """One LiDAR scan in the sensor frame plus its per-point class ids."""

    cloud: PointCloud
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 1 or lab.shape[0] != len(self.cloud):
            raise ValueError(
                f"labels length {lab.shape} does not match {len(self.cloud)} points")
        lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)


def read_scan(path, frame: str = "sensor") -> PointCloud:
    """Binary scan file -> point cloud; intensity channel is dropped."""
    raw = Path(path).read_bytes()
    if len(raw) % 16 != 0:
        raise ParseError(
            f"{path}: scan length {len(raw)} not a multiple of 16 "
            f"(truncated record at byte offset {len(raw) - len(raw) % 16})")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return PointCloud(data[:, :3].astype(np.float64), frame)


def write_scan(path, cloud: PointCloud) -> None:
    data = np.zeros((len(cloud), 4), dtype="<f4")
    data[:, :3] = cloud.points
    Path(path).write_bytes(data.tobytes())


def read_labels(path, count: int) -> np.ndarray:
    """Binary label file -> per-point class ids (lower 16 bits)."""
    raw = Path(path).read_bytes()
    if len(raw) != 4 * count:
        raise ParseError(
            f"{path}: expected {4 * count} bytes for {count} points, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<u4")
    return (values & 0xFFFF).astype(np.int64)


def write_labels(path, labels: np.ndarray) -> None:
    values = (np.asarray(labels).astype(np.uint32) & 0xFFFF).astype("<u4")
    Path(path).write_bytes(values.tobytes())


def read_semantic_scan(scan_path, label_path, timestep: int) -> SemanticScan:
    cloud = read_scan(scan_path, frame=f"sensor:{timestep}")
    labels = read_labels(label_path, len(cloud))
    return SemanticScan(cloud, labels)


def _orthonormalized(r: np.ndarray, where: str) -> np.ndarray:
    if np.linalg.det(r) <= 0:
        raise ParseError(f"{where}: rotation is a reflection, pose file corrupt")
    if np.abs(r @ r.T - np.eye(3)).max() <= 1e-9:
        return r
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def read_poses(path) -> list[Pose3]:
    """Odometry pose file -> one pose per line.

    Rotations are re-orthonormalized when file rounding pushed them off the
    manifold; a reflection is treated as corruption.
    """
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 12:
                raise ParseError(f"{path}:{lineno}: expected 12 numbers, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
            m = np.array(vals).reshape(3, 4)
            r = _orthonormalized(m[:, :3], f"{path}:{lineno}")
            poses.append(Pose3(r, m[:, 3]))
    return poses


def write_poses(path, poses: list[Pose3]) -> None:
    with open(path, "w") as f:
        for p in poses:
            f.write(" ".join(repr(float(v)) for v in p.matrix34().ravel()) + "\n")


@dataclass(frozen=True)
class LocalProjection:
    """Transverse-Mercator projection on a sphere, anchored at a reference.

    The anchor maps to (0, 0); metric distortion stays sub-centimeter for
    the tens-of-kilometers extents handled here.  Latitudes/longitudes in
    degrees, projected coordinates in meters.
    """

    lat0: float
    lon0: float
    radius: float = EARTH_RADIUS

    def forward(self, lat, lon):
        phi = np.radians(np.asarray(lat, dtype=np.float64))
        dlam = np.radians(np.asarray(lon, dtype=np.float64) - self.lon0)
        b = np.cos(phi) * np.sin(dlam)
        x = self.radius * np.arctanh(b)
        y = self.radius * (np.arctan2(np.tan(phi), np.cos(dlam)) - math.radians(self.lat0))
        return x, y

    def inverse(self, x, y):
        xs = np.asarray(x, dtype=np.float64) / self.radius
        ys = np.asarray(y, dtype=np.float64) / self.radius
        d = ys + math.radians(self.lat0)
        lat = np.degrees(np.arcsin(np.sin(d) / np.cosh(xs)))
        lon = self.lon0 + np.degrees(np.arctan2(np.sinh(xs), np.cos(d)))
        return lat, lon


@dataclass(frozen=True)
class GraphNode:
    lat: float
    lon: float
    xy: np.ndarray


@dataclass(frozen=True)
class RoadGraph:
    """Undirected road-network graph with projected node positions."""

    nodes: dict
    edges: frozenset

    def degree(self, node_id: int) -> int:
        return sum(1 for e in self.edges if node_id in e)

    def __post_init__(self):
        for a, b in self.edges:
            for nid in (a, b):
                if nid not in self.nodes:
                    raise ParseError(f"edge references unknown node {nid}")


@dataclass(frozen=True)
class IntersectionNodeSet:
    """Ground-truth intersection nodes: id-sorted positions in meters."""

    ids: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if ids.shape[0] != pos.shape[0]:
            raise ValueError("ids and positions disagree in length")
        ids.flags.writeable = False
        pos.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return self.ids.shape[0]


def load_road_graph(path, projection: LocalProjection) -> RoadGraph:
    """Parse the node/edge interchange format and project node positions.

    Lines: "N <id> <lat> <lon>" or "E <id1> <id2>"; '#' starts a comment.
    Duplicate edges collapse; an edge naming an unknown node is an error.
    """
    nodes: dict[int, GraphNode] = {}
    edges: set[tuple[int, int]] = set()
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "N" and len(parts) == 4:
                    nid = int(parts[1])
                    lat, lon = float(parts[2]), float(parts[3])
                    x, y = projection.forward(lat, lon)
                    nodes[nid] = GraphNode(lat, lon, np.array([float(x), float(y)]))
                elif parts[0] == "E" and len(parts) == 3:
                    a, b = int(parts[1]), int(parts[2])
                    if a != b:
                        edges.add((min(a, b), max(a, b)))
                else:
                    raise ParseError(f"{path}:{lineno}: unrecognized record '{line}'")
            except (ValueError, IndexError) as e:
                if isinstance(e, ParseError):
                    raise
                raise ParseError(f"{path}:{lineno}: {e}") from None
    for a, b in edges:
        for nid in (a, b):
            if nid not in nodes:
                raise ParseError(f"{path}: edge ({a}, {b}) references unknown node {nid}")
    return RoadGraph(nodes, frozenset(edges))


def write_road_graph(path, nodes: dict, edges) -> None:
    """nodes: id -> (lat, lon); edges: iterable of id pairs."""
    with open(path, "w") as f:
        for nid in sorted(nodes):
            lat, lon = nodes[nid]
            f.write(f"N {nid} {float(lat)!r} {float(lon)!r}\n")
        for a, b in sorted(tuple(sorted(e)) for e in edges):
            f.write(f"E {a} {b}\n")


def extract_intersection_nodes(graph: RoadGraph) -> IntersectionNodeSet:
    """Positions of all graph nodes with degree >= 3."""
    degree: dict[int, int] = {nid: 0 for nid in graph.nodes}
    for a, b in graph.edges:
        degree[a] += 1
        degree[b] += 1
    ids = sorted(nid for nid, d in degree.items() if d >= 3)
    pos = np.array([graph.nodes[n].xy for n in ids], dtype=np.float64).reshape(-1, 2)
    return IntersectionNodeSet(np.array(ids, dtype=np.int64), pos)


def read_gt_poses(path, projection: LocalProjection | None = None,
                  ) -> tuple[dict, LocalProjection]:
    """Georeferenced pose file: "<timestep> <lat> <lon> <yaw_deg>" per line.

    Returns planar poses in the projected frame keyed by timestep, plus the
    projection used (anchored at the first record unless one is supplied).
    """
    records = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 'k lat lon yaw_deg'")
            try:
                records.append((int(parts[0]), float(parts[1]),
                                float(parts[2]), float(parts[3])))
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
    if not records:
        raise ParseError(f"{path}: no ground-truth poses")
    if projection is None:
        projection = LocalProjection(records[0][1], records[0][2])
    poses: dict[int, Pose2] = {}
    for k, lat, lon, yaw_deg in records:
        if k in poses:
            raise ParseError(f"{path}: duplicate timestep {k}")
        x, y = projection.forward(lat, lon)
        poses[k] = Pose2(math.radians(yaw_deg), np.array([float(x), float(y)]))
    return poses, projection


def write_gt_poses(path, records) -> None:
    """records: iterable of (timestep, lat, lon, yaw_deg)."""
    with open(path, "w") as f:
        for k, lat, lon, yaw in records:
            f.write(f"{k} {float(lat)!r} {float(lon)!r} {float(yaw)!r}\n")


def read_gt_poses_matrix(path, calibration: Pose3 | None = None) -> dict:
    """Matrix-variant ground-truth poses: "<timestep> <12 floats>" per line.

    Rows are row-major 3x4 transforms already expressed in the projected
    frame; `calibration` (sensor mounting) is right-composed when given.
    """
    poses: dict[int, Pose2] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 13:
                raise ParseError(
                    f"{path}:{lineno}: expected timestep + 12 matrix entries")
            try:
                k = int(parts[0])
                vals = [float(p) for p in parts[1:]]
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
            if k in poses:
                raise ParseError(f"{path}: duplicate timestep {k}")
            m = np.array(vals).reshape(3, 4)
            pose = Pose3(_orthonormalized(m[:, :3], f"{path}:{lineno}"), m[:, 3])
            if calibration is not None:
                pose = compose(pose, calibration)
            poses[k] = project_to_pose2(pose)
    return poses


def load_label_map(path) -> LabelMap:
    """Label-map config: "<id> <name>" per line, '#' comments."""
    table: dict[int, str] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected '<id> <name>'")
            try:
                cid = int(parts[0])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad class id '{parts[0]}'") from None
            if cid in table:
                raise ParseError(f"{path}:{lineno}: duplicate class id {cid}")
            table[cid] = parts[1]
    return LabelMap(table)


def write_label_map(path, label_map: LabelMap) -> None:
    with open(path, "w") as f:
        for cid in sorted(label_map.table):
            f.write(f"{cid} {label_map.table[cid]}\n")

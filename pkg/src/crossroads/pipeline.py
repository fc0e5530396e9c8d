"""End-to-end orchestration: detect, evaluate, robustness sweep.

Detection runs once per keyframe: pool the surrounding keyframes, build the
BEV/occupancy/centerline rasters, pick candidates, verify and refine them,
and record sensor-frame intersections.  Every stage is pure per timestep,
so keyframes may be processed by a small worker pool without changing a
byte of output.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imageops
from .config import RunConfig
from .detection import (DetectorParams, KeyframeEntry, KeyframeWindow,
                        detect_corners, extract_centerline, infer_occupancy,
                        rasterize_bev, road_cloud_to_world, select_keyframes)
from .evaluation import EvalReport, evaluate_run
from .geometry import Pose3
from .ingest import (LabelMap, DEFAULT_LABEL_MAP, SemanticScan,
                     extract_intersection_nodes, load_label_map,
                     load_road_graph, read_gt_poses, read_poses,
                     read_semantic_scan)
from .noise import NoiseSpec, corrupt_labels
from .refinement import refine_timestep

DETECTIONS_FORMAT = "crossroads-detections"
ROBUSTNESS_CELLS = ((0.05, 0.05), (0.05, 0.20), (0.20, 0.05), (0.20, 0.20))


class InputError(ValueError):
    """Input files are missing, misaligned, or mutually inconsistent."""


@dataclass(frozen=True)
class DetectionRecord:
    x: float
    y: float
    branch_count: int
    residual: float


@dataclass(frozen=True)
class DetectionRun:
    """Sensor-frame detections keyed by processed timestep.

    Timesteps with no detections are present with empty tuples; evaluation
    needs them to count false negatives.
    """

    records: dict

    @property
    def timesteps(self) -> list:
        return sorted(self.records)

    def as_xy(self) -> dict:
        return {k: [(r.x, r.y) for r in v] for k, v in self.records.items()}


class InMemorySource:
    """Frame source over already-loaded scans."""

    def __init__(self, scans, poses):
        if len(scans) != len(poses):
            raise InputError(f"{len(scans)} scans vs {len(poses)} poses")
        self.poses = list(poses)
        self._scans = list(scans)

    def scan(self, k: int) -> SemanticScan:
        return self._scans[k]


class FileSource:
    """Frame source reading scan/label files on demand."""

    def __init__(self, scan_dir, label_dir, pose_file):
        self.scan_paths = sorted(Path(scan_dir).glob("*.bin"))
        self.label_paths = sorted(Path(label_dir).glob("*.label"))
        if not self.scan_paths:
            raise InputError(f"no .bin scans in {scan_dir}")
        if len(self.scan_paths) != len(self.label_paths):
            raise InputError(
                f"{len(self.scan_paths)} scans vs {len(self.label_paths)} label files")
        for s, l in zip(self.scan_paths, self.label_paths):
            if s.stem != l.stem:
                raise InputError(f"scan/label mismatch at {s.stem} vs {l.stem}")
        self.poses = read_poses(pose_file)
        if len(self.poses) != len(self.scan_paths):
            raise InputError(
                f"{len(self.poses)} poses vs {len(self.scan_paths)} scans")

    def scan(self, k: int) -> SemanticScan:
        try:
            return read_semantic_scan(self.scan_paths[k], self.label_paths[k], k)
        except Exception as e:
            raise InputError(f"timestep {k}: {e}") from e


def detect_at(window, params: DetectorParams, timestep: int):
    """One timestep's full coarse-to-fine detection."""
    bev = rasterize_bev(window, params)
    occ = infer_occupancy(bev, params)
    cen = extract_centerline(occ)
    cands = detect_corners(cen, params, timestep)
    dets = refine_timestep(cen, cands, params, window.center.pose)
    return dets, (bev, occ, cen)


def run_detection(source, params: DetectorParams, road_class: int,
                  causal: bool = False, noise: NoiseSpec | None = None,
                  workers: int = 1, debug_dir=None,
                  timesteps=None) -> DetectionRun:
    """Detect intersections at every keyframe of the source.

    `timesteps` optionally restricts output to the given raw frame indices
    (windows still pool their neighbors).  Results are independent of
    worker count.
    """
    poses = source.poses
    kf = select_keyframes(poses, params)
    cache: dict[int, KeyframeEntry] = {}

    def entry(i: int) -> KeyframeEntry:
        if i not in cache:
            k = kf[i]
            scan = source.scan(k)
            if noise is not None and not noise.is_clean:
                scan = corrupt_labels(scan, noise, road_class, timestep=k)
            cache[i] = KeyframeEntry(
                k, poses[k], road_cloud_to_world(scan, poses[k], road_class, k))
        return cache[i]

    wanted = None if timesteps is None else set(timesteps)
    centers = [ci for ci in range(len(kf))
               if wanted is None or kf[ci] in wanted]
    records: dict[int, tuple] = {}
    debug_dir = Path(debug_dir) if debug_dir is not None else None
    if debug_dir is not None:
        debug_dir.mkdir(parents=True, exist_ok=True)

    def window_span(ci: int) -> tuple[int, int]:
        lo = max(0, ci - params.half_window)
        hi = ci if causal else min(len(kf) - 1, ci + params.half_window)
        return lo, hi

    def process(ci: int):
        lo, hi = window_span(ci)
        window = KeyframeWindow(tuple(entry(j) for j in range(lo, hi + 1)),
                                ci - lo)
        dets, grids = detect_at(window, params, kf[ci])
        if debug_dir is not None:
            for name, grid in zip(("bev", "occ", "cen"), grids):
                imageops.write_pbm(debug_dir / f"{name}_{kf[ci]:06d}.pbm",
                                   grid.bits)
        return kf[ci], tuple(
            DetectionRecord(float(d.lidar_pos[0]), float(d.lidar_pos[1]),
                            d.branch_count, float(d.residual))
            for d in dets)

    chunk = max(1, workers)
    for start in range(0, len(centers), chunk):
        batch = centers[start:start + chunk]
        for ci in batch:  # materialize window entries sequentially
            lo, hi = window_span(ci)
            for j in range(lo, hi + 1):
                entry(j)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for k, recs in pool.map(process, batch):
                    records[k] = recs
        else:
            for ci in batch:
                k, recs = process(ci)
                records[k] = recs
        keep_from = (centers[min(start + chunk, len(centers) - 1)]
                     - params.half_window)
        for j in list(cache):
            if j < keep_from:
                del cache[j]
    return DetectionRun(records)


def write_detections(run: DetectionRun, text_path, jsonl_path) -> None:
    with open(text_path, "w") as f:
        f.write("# k x y branch_count residual\n")
        for k in run.timesteps:
            for r in run.records[k]:
                f.write(f"{k} {r.x:.6f} {r.y:.6f} {r.branch_count} "
                        f"{r.residual:.6f}\n")
    with open(jsonl_path, "w") as f:
        f.write(json.dumps({"format": DETECTIONS_FORMAT, "version": 1},
                           sort_keys=True) + "\n")
        for k in run.timesteps:
            row = {"k": k, "detections": [
                {"x": r.x, "y": r.y, "branch_count": r.branch_count,
                 "residual": r.residual} for r in run.records[k]]}
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_detections(jsonl_path) -> DetectionRun:
    records = {}
    with open(jsonl_path) as f:
        header = json.loads(f.readline())
        if header.get("format") != DETECTIONS_FORMAT:
            raise InputError(f"{jsonl_path}: not a detections file")
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            records[int(row["k"])] = tuple(
                DetectionRecord(d["x"], d["y"], d["branch_count"], d["residual"])
                for d in row["detections"])
    return DetectionRun(records)


def load_evaluation_inputs(gt_pose_file, graph_file):
    """Ground-truth poses plus the road graph in one shared projection."""
    gt_poses, projection = read_gt_poses(gt_pose_file)
    graph = load_road_graph(graph_file, projection)
    if graph.nodes:
        traj = np.array([p.translation for p in gt_poses.values()])
        node_xy = np.array([n.xy for n in graph.nodes.values()])
        gap = np.linalg.norm(traj.mean(axis=0) - node_xy.mean(axis=0))
        span = max(np.ptp(traj, axis=0).max(), np.ptp(node_xy, axis=0).max(), 1.0)
        if gap > span + 10_000.0:
            raise InputError(
                "trajectory and road graph do not overlap; pose file and "
                "graph were probably projected differently")
    return gt_poses, graph


def evaluate_detections(run: DetectionRun, gt_poses, graph,
                        cfg: RunConfig) -> EvalReport:
    nodes = extract_intersection_nodes(graph)
    return evaluate_run(run.as_xy(), gt_poses, nodes, cfg.roi_size,
                        cfg.outer_radius, cfg.d_values,
                        tp_only_ace=cfg.tp_only_ace)


def resolve_label_map(cfg: RunConfig) -> LabelMap:
    if cfg.label_map_file:
        return load_label_map(cfg.label_map_file)
    return DEFAULT_LABEL_MAP


def metrics_at(report: EvalReport, d: float):
    for m in report.per_d:
        if math.isclose(m.d, d):
            return m
    raise ValueError(f"threshold {d} not evaluated")


def run_robustness(source, cfg: RunConfig, label_map: LabelMap,
                   gt_poses, graph, cells=ROBUSTNESS_CELLS,
                   debug_root=None):
    """Detect + evaluate per corruption cell; clean cell first.

    Returns rows of (label, fpr, fnr, report, run).
    """
    params = cfg.detector_params()
    road = label_map.road_id
    confusion = tuple(label_map.id_of(n) for n in cfg.confusion_classes)
    rows = []
    all_cells = [("clean", 0.0, 0.0)] + [
        (f"sim-{round(f * 100):g}-{round(n * 100):g}", f, n) for f, n in cells]
    for label, fpr, fnr in all_cells:
        spec = NoiseSpec(fpr=fpr, fnr=fnr, confusion_classes=confusion,
                         seed=cfg.noise_seed)
        run = run_detection(source, params, road, causal=cfg.causal,
                            noise=spec, workers=cfg.workers,
                            debug_dir=None if debug_root is None
                            else Path(debug_root) / label)
        report = evaluate_detections(run, gt_poses, graph, cfg)
        rows.append((label, fpr, fnr, report, run))
    return rows

"""Road-graph based scoring of localized intersections.

Detections are georeferenced with the ground-truth vehicle pose and paired
with the nearest intersection node of the road graph inside the ROI.  A
pair closer than the confidence threshold is a true positive; a zone node
that no detection claims is a false negative.  The averaged pair distance
(over all matched pairs, independent of the threshold) is the center-error
metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2
from .ingest import IntersectionNodeSet


@dataclass(frozen=True)
class GeoreferencedDetection:
    timestep: int
    position: np.ndarray    # (2,) meters, projected georeferenced frame
    lidar_pos: np.ndarray   # (2,) meters, sensor frame (provenance)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        l = np.asarray(self.lidar_pos, dtype=np.float64)
        p.flags.writeable = False
        l.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "lidar_pos", l)


@dataclass(frozen=True)
class MatchRecord:
    """A detection paired with its nearest ground-truth node (if any)."""

    detection: GeoreferencedDetection
    node_id: int | None
    matched_node: np.ndarray | None
    center_error: float | None

    def verdict(self, threshold: float) -> str:
        if self.center_error is not None and self.center_error < threshold:
            return "TP"
        return "FP"


@dataclass(frozen=True)
class ThresholdMetrics:
    d: float
    tp: int
    fp: int
    fn: int
    precision: float | None
    recall: float | None
    f1: float | None
    ace_tp: float | None = None


@dataclass(frozen=True)
class EvalReport:
    ace: float | None
    matched_pairs: int
    detections_evaluated: int
    per_d: tuple[ThresholdMetrics, ...]
    diagnostics: dict = field(default_factory=dict)
    per_sequence: dict = field(default_factory=dict)


def georeference(lidar_pos: np.ndarray, timestep: int,
                 gt_pose: Pose2) -> GeoreferencedDetection:
    """Express a sensor-frame detection in the georeferenced frame."""
    return GeoreferencedDetection(timestep, gt_pose.apply(lidar_pos), lidar_pos)


def nodes_in_roi(nodes: IntersectionNodeSet, center_xy: np.ndarray,
                 roi_size: float) -> IntersectionNodeSet:
    """Nodes inside the open axis-aligned square of side roi_size."""
    half = roi_size / 2.0
    c = np.asarray(center_xy, dtype=np.float64)
    if len(nodes) == 0:
        return nodes
    off = np.abs(nodes.positions - c)
    keep = (off[:, 0] < half) & (off[:, 1] < half)
    return IntersectionNodeSet(nodes.ids[keep], nodes.positions[keep])


def match_detection(det: GeoreferencedDetection,
                    candidates: IntersectionNodeSet) -> MatchRecord:
    """Pair a detection with its nearest node; ties go to the lowest id."""
    if len(candidates) == 0:
        return MatchRecord(det, None, None, None)
    d = np.linalg.norm(candidates.positions - det.position, axis=1)
    best = np.lexsort((candidates.ids, d))[0]
    return MatchRecord(det, int(candidates.ids[best]),
                       candidates.positions[best], float(d[best]))


def count_false_negatives(nodes: IntersectionNodeSet,
                          matches_at_k: list[MatchRecord],
                          center_xy: np.ndarray, roi_size: float,
                          outer_radius: float, threshold: float) -> int:
    """Zone nodes with no sufficiently close match at this timestep.

    The relevant zone is the open centered square of side
    roi_size - 2*outer_radius: nearer the ROI rim a full branch annulus
    does not fit, so misses there are not the detector's fault.
    """
    zone = nodes_in_roi(nodes, center_xy, roi_size - 2.0 * outer_radius)
    claimed = {m.node_id for m in matches_at_k
               if m.node_id is not None and m.center_error < threshold}
    return sum(1 for nid in zone.ids if int(nid) not in claimed)


def compute_ace(matches: list[MatchRecord],
                threshold: float | None = None) -> float | None:
    """Average center error over matched pairs; None when nothing matched.

    With `threshold` given, only pairs below it (true positives) average in;
    by default every matched pair counts, however far.
    """
    errs = [m.center_error for m in matches if m.center_error is not None]
    if threshold is not None:
        errs = [e for e in errs if e < threshold]
    if not errs:
        return None
    return float(sum(errs) / len(errs))


def compute_pr_f1(tp: int, fp: int, fn: int,
                  ) -> tuple[float | None, float | None, float | None]:
    """Precision, recall, F1; a zero denominator yields None, not zero."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def evaluate_run(detections: dict, gt_poses: dict, nodes: IntersectionNodeSet,
                 roi_size: float, outer_radius: float, d_values,
                 tp_only_ace: bool = False) -> EvalReport:
    """Score a full detection run against the road graph.

    `detections` maps every processed timestep to its sensor-frame (x, y)
    detections (empty lists included: a timestep with no detections still
    accrues false negatives).  Timesteps without a ground-truth pose cannot
    be georeferenced and are skipped, tallied in the diagnostics.
    """
    matches_by_k: dict[int, list[MatchRecord]] = {}
    skipped_timesteps = 0
    skipped_detections = 0
    for k in sorted(detections):
        if k not in gt_poses:
            skipped_timesteps += 1
            skipped_detections += len(detections[k])
            continue
        pose = gt_poses[k]
        roi_nodes = nodes_in_roi(nodes, pose.translation, roi_size)
        recs = []
        for xy in detections[k]:
            det = georeference(np.asarray(xy, dtype=np.float64), k, pose)
            recs.append(match_detection(det, roi_nodes))
        matches_by_k[k] = recs
    all_matches = [m for recs in matches_by_k.values() for m in recs]
    total_dets = len(all_matches)
    per_d = []
    for d in d_values:
        tp = sum(1 for m in all_matches if m.verdict(d) == "TP")
        fp = total_dets - tp
        fn = 0
        for k, recs in matches_by_k.items():
            fn += count_false_negatives(nodes, recs, gt_poses[k].translation,
                                        roi_size, outer_radius, d)
        precision, recall, f1 = compute_pr_f1(tp, fp, fn)
        per_d.append(ThresholdMetrics(
            float(d), tp, fp, fn, precision, recall, f1,
            ace_tp=compute_ace(all_matches, d) if tp_only_ace else None))
    matched = sum(1 for m in all_matches if m.center_error is not None)
    zone_nodes_seen = {
        int(nid)
        for k in matches_by_k
        for nid in nodes_in_roi(nodes, gt_poses[k].translation,
                                roi_size - 2.0 * outer_radius).ids}
    ever_claimed = {m.node_id for m in all_matches if m.node_id is not None}
    report = EvalReport(
        ace=compute_ace(all_matches),
        matched_pairs=matched,
        detections_evaluated=total_dets,
        per_d=tuple(per_d),
        diagnostics={
            "timesteps_without_gt_pose": skipped_timesteps,
            "detections_without_gt_pose": skipped_detections,
            "zone_nodes_never_matched": len(zone_nodes_seen - ever_claimed),
        },
    )
    return report


def combine_reports(named: dict) -> EvalReport:
    """Aggregate per-sequence reports into one (counts add, errors pool)."""
    if not named:
        raise ValueError("nothing to combine")
    d_lists = [tuple(m.d for m in r.per_d) for r in named.values()]
    if len(set(d_lists)) != 1:
        raise ValueError("reports use different threshold lists")
    per_d = []
    for i, d in enumerate(d_lists[0]):
        tp = sum(r.per_d[i].tp for r in named.values())
        fp = sum(r.per_d[i].fp for r in named.values())
        fn = sum(r.per_d[i].fn for r in named.values())
        precision, recall, f1 = compute_pr_f1(tp, fp, fn)
        per_d.append(ThresholdMetrics(d, tp, fp, fn, precision, recall, f1))
    matched = sum(r.matched_pairs for r in named.values())
    err_sum = sum(r.ace * r.matched_pairs for r in named.values()
                  if r.ace is not None)
    diagnostics: dict[str, int] = {}
    for r in named.values():
        for key, val in r.diagnostics.items():
            diagnostics[key] = diagnostics.get(key, 0) + val
    return EvalReport(
        ace=err_sum / matched if matched else None,
        matched_pairs=matched,
        detections_evaluated=sum(r.detections_evaluated for r in named.values()),
        per_d=tuple(per_d),
        diagnostics=diagnostics,
        per_sequence=dict(named),
    )

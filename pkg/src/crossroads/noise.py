"""Seeded segmentation-error injection.

Reproduces segmentation degradation by relabeling an exact fraction of road
points to a non-road sentinel (false negatives) and an exact fraction of
each confusion class to road (false positives).  Corruption of one scan is
a pure function of (scan, spec, timestep): the per-scan generator is
derived from the spec seed and the timestep, so scans corrupt identically
whatever order they are processed in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ingest import SemanticScan

REMOVED_ROAD_CLASS = 0  # sentinel for dropped road points ("unlabeled")


@dataclass(frozen=True)
class NoiseSpec:
    """Error rates and sampling seed for label corruption."""

    fpr: float = 0.0
    fnr: float = 0.0
    confusion_classes: tuple[int, ...] = (48, 44, 49)
    seed: int = 0

    def __post_init__(self):
        for name in ("fpr", "fnr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        object.__setattr__(self, "confusion_classes",
                           tuple(int(c) for c in self.confusion_classes))

    @property
    def is_clean(self) -> bool:
        return self.fpr == 0.0 and self.fnr == 0.0


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def corrupt_labels(scan: SemanticScan, spec: NoiseSpec, road_class: int,
                   timestep: int = 0) -> SemanticScan:
    """Relabel exact per-class fractions of one scan's points.

    Exactly round(fnr * N_road) road points become the sentinel class and
    exactly round(fpr * N_c) points of each confusion class c become road.
    Coordinates are untouched.
    """
    if spec.is_clean:
        return scan
    rng = np.random.default_rng(
        np.random.SeedSequence(spec.seed, spawn_key=(timestep,)))
    labels = scan.labels.copy()
    road_idx = np.nonzero(scan.labels == road_class)[0]
    n_remove = _round_half_up(spec.fnr * road_idx.size)
    if n_remove:
        drop = rng.choice(road_idx, size=n_remove, replace=False)
        labels[drop] = REMOVED_ROAD_CLASS
    for cls in spec.confusion_classes:
        cls_idx = np.nonzero(scan.labels == cls)[0]
        n_add = _round_half_up(spec.fpr * cls_idx.size)
        if n_add:
            add = rng.choice(cls_idx, size=n_add, replace=False)
            labels[add] = road_class
    return SemanticScan(scan.cloud, labels)


def measure_error_rates(gt_label_arrays, pred_label_arrays, road_class: int,
                        confusion_classes) -> tuple[float, float]:
    """Effective (fpr, fnr) of predicted labels against ground truth.

    Per-point counts pooled over the whole sequence: fnr is the fraction of
    true road points not predicted road; fpr the fraction of
    confusion-class points predicted road.
    """
    confusion = set(int(c) for c in confusion_classes)
    road_total = road_missed = 0
    conf_total = conf_as_road = 0
    for gt, pred in zip(gt_label_arrays, pred_label_arrays):
        gt = np.asarray(gt)
        pred = np.asarray(pred)
        if gt.shape != pred.shape:
            raise ValueError("label arrays disagree in length")
        is_road = gt == road_class
        road_total += int(is_road.sum())
        road_missed += int((is_road & (pred != road_class)).sum())
        is_conf = np.isin(gt, list(confusion))
        conf_total += int(is_conf.sum())
        conf_as_road += int((is_conf & (pred == road_class)).sum())
    fnr = road_missed / road_total if road_total else 0.0
    fpr = conf_as_road / conf_total if conf_total else 0.0
    return fpr, fnr

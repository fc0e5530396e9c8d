"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with its runtime (run with `pytest tests/test_acceptance.py -s`).
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from crossroads import imageops, pipeline, synth
from crossroads.config import RunConfig
from crossroads.detection import DetectorParams
from crossroads.evaluation import (compute_ace, compute_pr_f1,
                                   count_false_negatives, evaluate_run,
                                   georeference, match_detection,
                                   nodes_in_roi)
from crossroads.geometry import Pose2
from crossroads.ingest import DEFAULT_LABEL_MAP, IntersectionNodeSet
from crossroads.pipeline import InMemorySource, metrics_at, run_detection
from crossroads.refinement import Branch, DegenerateGeometryError, refine_position
from oracles import brute_force_refine

ROAD = DEFAULT_LABEL_MAP.road_id


@contextmanager
def criterion(name, budget_s):
    t0 = time.time()
    try:
        yield
    except Exception:
        print(f"FAIL {name} ({time.time() - t0:.1f}s)")
        raise
    elapsed = time.time() - t0
    assert elapsed < budget_s, f"{name} exceeded {budget_s}s budget ({elapsed:.1f}s)"
    print(f"PASS {name} ({elapsed:.1f}s)")


def test_kernel_oracle_equivalence():
    """refine_position == exhaustive brute-force argmin, 100 random configs."""
    with criterion("kernel-oracle-equivalence", 60):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 100:
            n_branches = int(rng.integers(2, 7))
            branches = []
            for _ in range(n_branches):
                s = rng.uniform(60, 340, 2)
                ang = rng.uniform(0, math.pi)
                c = s + rng.uniform(25, 110) * np.array([math.cos(ang), math.sin(ang)])
                branches.append(Branch(np.array([[0, 0]]), s, c))
            cand = rng.uniform(140, 260, 2)
            inner_m = rng.uniform(4.0, 9.0)
            try:
                px, res = refine_position(branches, cand, inner_m, 0.16)
            except DegenerateGeometryError:
                continue
            opx, ores = brute_force_refine([b.line() for b in branches],
                                           cand, inner_m / 0.16)
            assert np.array_equal(px, opx), f"config {checked}: {px} vs {opx}"
            assert res == ores, f"config {checked}: residual mismatch"
            checked += 1


def test_morphology_thinning_properties():
    """Idempotence, skeleton containment, component preservation; 50 blobs."""
    with criterion("morphology-thinning-properties", 60):
        rng = np.random.default_rng(77)
        for trial in range(50):
            size = int(rng.integers(192, 513))
            img = np.zeros((size, size), bool)
            yy, xx = np.mgrid[:size, :size]
            for _ in range(int(rng.integers(2, 9))):
                cy, cx = rng.uniform(20, size - 20, 2)
                r = rng.uniform(4, 30)
                img |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            for _ in range(int(rng.integers(0, 5))):
                y0, x0 = rng.uniform(10, size - 80, 2)
                halfw = rng.uniform(2, 8)
                length = rng.uniform(30, size / 2)
                ang = rng.uniform(0, np.pi)
                d = np.cos(ang) * (xx - x0) + np.sin(ang) * (yy - y0)
                nn = -np.sin(ang) * (xx - x0) + np.cos(ang) * (yy - y0)
                img |= (np.abs(nn) <= halfw) & (d >= 0) & (d <= length)

            closed = imageops.binary_close(img, 10)
            assert np.array_equal(imageops.binary_close(closed, 10), closed), \
                f"trial {trial}: closing not idempotent"
            occ = imageops.binary_open(closed, 7)
            assert np.array_equal(imageops.binary_open(occ, 7), occ), \
                f"trial {trial}: opening not idempotent"
            sk = imageops.thin(occ)
            assert not (sk & ~occ).any(), f"trial {trial}: skeleton escapes occupancy"
            assert imageops.count_components(sk) == imageops.count_components(occ), \
                f"trial {trial}: component count changed"


def _junction_zone_timesteps(run, seq, junction, cfg):
    half = (cfg.roi_size - 2.0 * cfg.outer_radius) / 2.0
    out = []
    for k in run.timesteps:
        p = seq.gt_poses[k].translation
        if abs(junction[0] - p[0]) < half and abs(junction[1] - p[1]) < half:
            out.append(k)
    return out


def test_synthetic_cross_end_to_end():
    """8 m cross, 30 pts/m2, 10 m/s, reference defaults: ACE<1, Pre@5=1, Rec@5>=0.9."""
    with criterion("synthetic-cross-end-to-end", 120):
        cfg = RunConfig()
        # 55 m approach either side: the junction stays strictly inside the
        # matching ROI at every keyframe (at 60 m it sits on the open border)
        seq = synth.generate_sequence(
            synth.cross_scene(road_width=8.0, density=30.0, speed=10.0,
                              traj_extent=55.0, half_length=120.0, seed=42))
        run = run_detection(InMemorySource(seq.scans, seq.poses),
                            cfg.detector_params(), ROAD)
        report = pipeline.evaluate_detections(run, seq.gt_poses, seq.graph, cfg)
        assert report.ace is not None and report.ace < 1.0, f"ACE {report.ace}"
        m5 = metrics_at(report, 5.0)
        assert m5.precision == 1.0, f"Pre@5 {m5.precision}"

        junction = np.zeros(2)
        zone_ks = _junction_zone_timesteps(run, seq, junction, cfg)
        assert zone_ks, "vehicle never had the junction in its relevant zone"
        zone_run = pipeline.DetectionRun({k: run.records[k] for k in zone_ks})
        zone_report = pipeline.evaluate_detections(zone_run, seq.gt_poses,
                                                   seq.graph, cfg)
        z5 = metrics_at(zone_report, 5.0)
        recall = z5.tp / (z5.tp + z5.fn)
        assert recall >= 0.9, f"zone Rec@5 {recall}"
        print(f"  cross: ACE={report.ace:.3f} Pre@5={m5.precision} "
              f"zone-Rec@5={recall:.3f} over {len(zone_ks)} timesteps", end=" ")


def test_tee_straight_and_curve():
    """T detected with 3 branches; straight and gentle curves stay silent."""
    with criterion("tee-straight-curve", 60):
        cfg = RunConfig()
        params = cfg.detector_params()

        seq = synth.generate_sequence(
            synth.tee_scene(density=15.0, traj_extent=40.0, seed=7))
        run = run_detection(InMemorySource(seq.scans, seq.poses), params, ROAD)
        hits = [r for v in run.records.values() for r in v]
        assert hits, "T junction never detected"
        assert all(r.branch_count == 3 for r in hits), \
            sorted({r.branch_count for r in hits})
        report = pipeline.evaluate_detections(run, seq.gt_poses, seq.graph, cfg)
        assert metrics_at(report, 5.0).precision == 1.0

        for label, spec in (
            ("straight", synth.straight_scene(angle_deg=25.0, density=15.0,
                                              traj_extent=40.0, seed=8)),
            ("curve", synth.curve_scene(radius=150.0, density=15.0, seed=9)),
        ):
            seq = synth.generate_sequence(spec)
            run = run_detection(InMemorySource(seq.scans, seq.poses), params, ROAD)
            n = sum(len(v) for v in run.records.values())
            assert n == 0, f"{label}: {n} spurious detections"


def test_robustness_trend():
    """Moderate corruption barely moves ACE; heavy corruption keeps Pre@5>=0.75."""
    with criterion("robustness-trend", 300):
        cfg = RunConfig(noise_seed=3)
        seq = synth.generate_sequence(
            synth.cross_scene(density=15.0, traj_extent=50.0, seed=11,
                              sidewalk_widths=(2.5, 1.5)))
        src = InMemorySource(seq.scans, seq.poses)
        gt_poses, graph = seq.gt_poses, seq.graph
        rows = pipeline.run_robustness(src, cfg, DEFAULT_LABEL_MAP,
                                       gt_poses, graph)
        by_label = {label: report for label, _, _, report, _ in rows}
        clean_ace = by_label["clean"].ace
        for label in ("sim-5-5", "sim-5-20"):
            delta = abs(by_label[label].ace - clean_ace)
            assert delta < 0.5, f"{label}: ACE moved {delta:.2f} m"
        for label in ("sim-20-5", "sim-20-20"):
            pre = metrics_at(by_label[label], 5.0).precision
            assert pre is not None and pre >= 0.75, f"{label}: Pre@5 {pre}"
        fp_heavy = by_label["sim-20-5"].ace - clean_ace
        fn_heavy = by_label["sim-5-20"].ace - clean_ace
        print(f"  ACE deltas: 5-5={by_label['sim-5-5'].ace - clean_ace:+.2f} "
              f"5-20={fn_heavy:+.2f} 20-5={fp_heavy:+.2f} "
              f"20-20={by_label['sim-20-20'].ace - clean_ace:+.2f} "
              f"(FP-heavy vs FN-heavy: {fp_heavy:+.2f} vs {fn_heavy:+.2f})",
              end=" ")


def test_evaluation_math_fixtures():
    """Matching, FN, ACE and PR/F1 formulas on hand-computable fixtures."""
    with criterion("evaluation-math-fixtures", 60):
        nodes = IntersectionNodeSet(np.array([1, 2]),
                                    np.array([[3.0, 0.0], [7.0, 0.0]]))
        det = georeference(np.array([0.0, 0.0]), 0, Pose2.identity())
        m = match_detection(det, nodes)
        assert m.node_id == 1 and m.center_error == 3.0
        assert m.verdict(5.0) == "TP" and m.verdict(3.0) == "FP"

        empty = IntersectionNodeSet(np.array([], dtype=np.int64),
                                    np.zeros((0, 2)))
        assert match_detection(det, empty).verdict(5.0) == "FP"

        near = IntersectionNodeSet(np.array([1]), np.array([[4.9, 0.0]]))
        assert match_detection(det, near).verdict(5.0) == "TP"

        zone_node = IntersectionNodeSet(np.array([1]), np.array([[10.0, 5.0]]))
        assert count_false_negatives(zone_node, [], np.zeros(2), 120.0, 40.0, 5.0) == 1
        mm = match_detection(georeference(np.array([10.0, 5.0]), 0,
                                          Pose2.identity()), zone_node)
        assert count_false_negatives(zone_node, [mm], np.zeros(2), 120.0, 40.0, 5.0) == 0
        outside = IntersectionNodeSet(np.array([1]), np.array([[36.0, 0.0]]))
        assert count_false_negatives(outside, [], np.zeros(2), 120.0, 40.0, 5.0) == 0

        roi = nodes_in_roi(IntersectionNodeSet(np.array([1, 2, 3]),
                                               np.array([[0.0, 0.0],
                                                         [60.0, 0.0],
                                                         [120.0, 0.0]])),
                           np.zeros(2), 120.0)
        assert roi.ids.tolist() == [1]  # boundary is open

        mid = IntersectionNodeSet(np.array([1]), np.array([[4.5, 0.0]]))
        two = [match_detection(georeference(np.array([x, 0.0]), 0,
                                            Pose2.identity()), mid)
               for x in (3.5, 1.5)]  # errors exactly 1.0 and 3.0
        assert compute_ace(two) == 2.0
        assert compute_ace([]) is None

        assert compute_pr_f1(1, 1, 0) == (0.5, 1.0, pytest.approx(2 / 3))
        pre, rec, f1 = compute_pr_f1(0, 0, 5)
        assert pre is None and rec == 0.0 and f1 is None


@pytest.mark.skip(reason="requires the external drive dataset, its learned "
                         "road labels, and a map extract; not runnable at "
                         "desk scale (expected: avg ACE 1.92 m +/- 0.3, "
                         "Pre@5 89.48 +/- 3, Rec@5 76.74 +/- 3)")
def test_full_dataset_reproduction():
    pass


def test_determinism_of_robustness_runs(tmp_path):
    """Two identical robustness invocations produce byte-identical trees."""
    with criterion("robustness-determinism", 300):
        from crossroads.cli import main, EXIT_OK
        scene = tmp_path / "scene"
        assert main(["synth", "--scene", "cross", "--out", str(scene),
                     "--density", "4", "--traj-extent", "16",
                     "--seed", "5"]) == EXIT_OK
        import shutil
        outdir = tmp_path / "out"
        cfg = tmp_path / "run.cfg"
        cfg.write_text((scene / "run.cfg").read_text()
                       + f"output_dir = {outdir}\n"
                       + "detector.resolution = 0.5\n"
                       + "eval.d_values = 1.0,5.0\n")

        def run_once():
            assert main(["robustness", "--config", str(cfg)]) == EXIT_OK
            return {p.relative_to(outdir): p.read_bytes()
                    for p in sorted(outdir.rglob("*")) if p.is_file()}

        a = run_once()
        shutil.rmtree(outdir)
        b = run_once()
        assert set(a) == set(b)
        for rel in a:
            assert a[rel] == b[rel], f"{rel} differs between runs"

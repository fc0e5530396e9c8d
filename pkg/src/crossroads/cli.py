"""Command-line front end.

Subcommands: detect, evaluate, robustness, synth, measure-noise,
debug-images.  Exit codes: 0 success, 1 input error, 2 config error,
3 internal invariant violation.  Every command drops a manifest next to
its outputs recording the config hash and input hashes, and identical
runs produce byte-identical output trees.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, config_to_text, load_config
from .evaluation import EvalReport
from .ingest import ParseError, load_label_map, DEFAULT_LABEL_MAP
from .noise import measure_error_rates
from .pipeline import (FileSource, InputError, ROBUSTNESS_CELLS,
                       evaluate_detections, load_evaluation_inputs,
                       metrics_at, read_detections, run_detection,
                       run_robustness, write_detections)
from .synth import (SceneError, cross_scene, curve_scene, generate_sequence,
                    straight_scene, tee_scene, write_scene)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_INTERNAL = 3


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _hash_input(path: Path) -> str:
    if path.is_dir():
        h = hashlib.sha256()
        for child in sorted(p for p in path.iterdir() if p.is_file()):
            h.update(child.name.encode())
            h.update(bytes.fromhex(_sha256_file(child)))
        return h.hexdigest()
    return _sha256_file(path)


def _write_manifest(outdir: Path, command: str, cfg: RunConfig,
                    inputs: dict, outputs: list) -> None:
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "config_sha256": hashlib.sha256(
            config_to_text(cfg).encode()).hexdigest(),
        "inputs": {name: _hash_input(Path(p))
                   for name, p in sorted(inputs.items()) if p},
        "outputs": sorted(outputs),
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _fmt(value, pct: bool = False) -> str:
    if value is None:
        return "-"
    return f"{value * 100.0:.2f}" if pct else f"{value:.3f}"


def report_to_dict(report: EvalReport) -> dict:
    d = {
        "ace": report.ace,
        "matched_pairs": report.matched_pairs,
        "detections_evaluated": report.detections_evaluated,
        "per_d": [vars(m).copy() for m in report.per_d],
        "diagnostics": dict(report.diagnostics),
    }
    if report.per_sequence:
        d["per_sequence"] = {name: report_to_dict(r)
                             for name, r in report.per_sequence.items()}
    return d


def report_to_table(report: EvalReport) -> str:
    lines = [
        f"ACE: {_fmt(report.ace)} m over {report.matched_pairs} matched pairs "
        f"({report.detections_evaluated} detections evaluated)",
        f"{'D':>6} {'TP':>6} {'FP':>6} {'FN':>6} {'Pre':>8} {'Rec':>8} {'F1':>8}",
    ]
    for m in report.per_d:
        lines.append(
            f"{m.d:6.2f} {m.tp:6d} {m.fp:6d} {m.fn:6d} "
            f"{_fmt(m.precision):>8} {_fmt(m.recall):>8} {_fmt(m.f1):>8}")
    diag = ", ".join(f"{k}={v}" for k, v in sorted(report.diagnostics.items()))
    lines.append(f"diagnostics: {diag}")
    return "\n".join(lines) + "\n"


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = args.output_dir
    if os.environ.get("CROSSROADS_OUTPUT_DIR"):
        overrides["output_dir"] = os.environ["CROSSROADS_OUTPUT_DIR"]
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    if getattr(args, "debug_images", False):
        overrides["debug_images"] = True
    if getattr(args, "causal", False):
        overrides["causal"] = True
    for key in ("noise_fpr", "noise_fnr", "noise_seed"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    if not cfg.output_dir:
        raise ConfigError("output_dir is not set")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _detect_inputs(cfg: RunConfig) -> dict:
    for key in ("scan_dir", "label_dir", "pose_file"):
        if not getattr(cfg, key):
            raise ConfigError(f"{key} is not set")
    return {"scan_dir": cfg.scan_dir, "label_dir": cfg.label_dir,
            "pose_file": cfg.pose_file, "label_map_file": cfg.label_map_file}


def cmd_detect(args) -> int:
    cfg = _load_cfg(args)
    inputs = _detect_inputs(cfg)
    out = _outdir(cfg)
    label_map = (load_label_map(cfg.label_map_file) if cfg.label_map_file
                 else DEFAULT_LABEL_MAP)
    source = FileSource(cfg.scan_dir, cfg.label_dir, cfg.pose_file)
    run = run_detection(
        source, cfg.detector_params(), label_map.road_id, causal=cfg.causal,
        noise=cfg.noise_spec(label_map), workers=cfg.workers,
        debug_dir=out / "debug" if cfg.debug_images else None,
        timesteps=getattr(args, "timestep", None))
    write_detections(run, out / "detections.txt", out / "detections.jsonl")
    outputs = ["detections.txt", "detections.jsonl"]
    _write_manifest(out, args.command, cfg, inputs, outputs)
    print(f"wrote {sum(len(v) for v in run.records.values())} detections "
          f"over {len(run.records)} keyframes to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    for key in ("gt_pose_file", "graph_file"):
        if not getattr(cfg, key):
            raise ConfigError(f"{key} is not set")
    out = _outdir(cfg)
    det_path = Path(args.detections) if args.detections else out / "detections.jsonl"
    run = read_detections(det_path)
    gt_poses, graph = load_evaluation_inputs(cfg.gt_pose_file, cfg.graph_file)
    report = evaluate_detections(run, gt_poses, graph, cfg)
    (out / "report.json").write_text(
        json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n")
    (out / "report.txt").write_text(report_to_table(report))
    _write_manifest(out, "evaluate", cfg,
                    {"detections": det_path, "gt_pose_file": cfg.gt_pose_file,
                     "graph_file": cfg.graph_file},
                    ["report.json", "report.txt"])
    sys.stdout.write(report_to_table(report))
    return EXIT_OK


def _parse_cells(text: str):
    cells = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            f, n = tok.split("-")
            cells.append((float(f) / 100.0, float(n) / 100.0))
        except ValueError:
            raise ConfigError(f"bad cell '{tok}', expected FPR-FNR percents")
    return tuple(cells)


def robustness_table(rows, d: float) -> str:
    lines = [f"{'label':<12} {'r-FPR':>6} {'r-FNR':>6} {'ACE':>8} "
             f"{'Pre@' + format(d, 'g'):>8} {'Rec@' + format(d, 'g'):>8}"]
    for label, fpr, fnr, report, _ in rows:
        m = metrics_at(report, d)
        lines.append(
            f"{label:<12} {fpr * 100:6.2f} {fnr * 100:6.2f} "
            f"{_fmt(report.ace):>8} {_fmt(m.precision, pct=True):>8} "
            f"{_fmt(m.recall, pct=True):>8}")
    return "\n".join(lines) + "\n"


def cmd_robustness(args) -> int:
    cfg = _load_cfg(args)
    inputs = _detect_inputs(cfg)
    for key in ("gt_pose_file", "graph_file"):
        if not getattr(cfg, key):
            raise ConfigError(f"{key} is not set")
    inputs.update({"gt_pose_file": cfg.gt_pose_file,
                   "graph_file": cfg.graph_file})
    out = _outdir(cfg)
    label_map = (load_label_map(cfg.label_map_file) if cfg.label_map_file
                 else DEFAULT_LABEL_MAP)
    source = FileSource(cfg.scan_dir, cfg.label_dir, cfg.pose_file)
    gt_poses, graph = load_evaluation_inputs(cfg.gt_pose_file, cfg.graph_file)
    cells = _parse_cells(args.cells) if args.cells else ROBUSTNESS_CELLS
    rows = run_robustness(source, cfg, label_map, gt_poses, graph, cells=cells)
    outputs = []
    for label, fpr, fnr, report, run in rows:
        cell_dir = out / label
        cell_dir.mkdir(parents=True, exist_ok=True)
        write_detections(run, cell_dir / "detections.txt",
                         cell_dir / "detections.jsonl")
        (cell_dir / "report.json").write_text(
            json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n")
        outputs += [f"{label}/detections.txt", f"{label}/detections.jsonl",
                    f"{label}/report.json"]
    d = args.table_d
    summary = {
        "table_d": d,
        "rows": [{"label": label, "fpr": fpr, "fnr": fnr, "ace": report.ace,
                  "precision": metrics_at(report, d).precision,
                  "recall": metrics_at(report, d).recall}
                 for label, fpr, fnr, report, _ in rows],
    }
    (out / "robustness.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    (out / "robustness.txt").write_text(robustness_table(rows, d))
    outputs += ["robustness.json", "robustness.txt"]
    _write_manifest(out, "robustness", cfg, inputs, outputs)
    sys.stdout.write(robustness_table(rows, d))
    return EXIT_OK


def cmd_synth(args) -> int:
    makers = {"cross": cross_scene, "tee": tee_scene,
              "straight": straight_scene, "curve": curve_scene}
    kwargs = dict(road_width=args.road_width, density=args.density,
                  speed=args.speed, seed=args.seed)
    if args.scene == "straight":
        kwargs["angle_deg"] = args.angle
    if args.scene == "curve":
        kwargs["radius"] = args.radius
    else:
        kwargs["traj_extent"] = args.traj_extent
    seq = generate_sequence(makers[args.scene](**kwargs))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = write_scene(seq, outdir)
    cfg_lines = [f"name = synth-{args.scene}"]
    for key in ("scan_dir", "label_dir", "pose_file", "gt_pose_file",
                "graph_file", "label_map_file"):
        cfg_lines.append(f"{key} = {paths[key]}")
    cfg_lines.append(f"output_dir = {outdir / 'out'}")
    (outdir / "run.cfg").write_text("\n".join(cfg_lines) + "\n")
    print(f"wrote {len(seq.scans)} scans to {outdir} (config: {outdir / 'run.cfg'})")
    return EXIT_OK


def cmd_measure_noise(args) -> int:
    label_map = (load_label_map(args.label_map) if args.label_map
                 else DEFAULT_LABEL_MAP)
    gt_paths = sorted(Path(args.gt_labels).glob("*.label"))
    pred_paths = sorted(Path(args.pred_labels).glob("*.label"))
    if len(gt_paths) != len(pred_paths) or not gt_paths:
        raise InputError(
            f"{len(gt_paths)} ground-truth vs {len(pred_paths)} predicted label files")
    import numpy as np

    def arrays(paths):
        for p in paths:
            raw = np.fromfile(p, dtype="<u4")
            yield (raw & 0xFFFF).astype(np.int64)

    fpr, fnr = measure_error_rates(
        arrays(gt_paths), arrays(pred_paths), label_map.road_id,
        label_map.confusion_ids)
    print(json.dumps({"r_fpr": fpr, "r_fnr": fnr}, sort_keys=True))
    return EXIT_OK


def cmd_debug_images(args) -> int:
    args.debug_images = True
    return cmd_detect(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossroads",
        description="Road-intersection localization from semantic LiDAR scans")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="run config file")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("--workers", type=int, help="worker pool size")

    p = sub.add_parser("detect", help="run the detection pipeline")
    add_common(p)
    p.add_argument("--causal", action="store_true",
                   help="pool only past keyframes (no lookahead)")
    p.add_argument("--debug-images", action="store_true",
                   help="dump BEV/occupancy/centerline rasters as PBM")
    p.add_argument("--noise-fpr", type=float, dest="noise_fpr")
    p.add_argument("--noise-fnr", type=float, dest="noise_fnr")
    p.add_argument("--noise-seed", type=int, dest="noise_seed")

    p = sub.add_parser("evaluate", help="score detections against the road graph")
    add_common(p)
    p.add_argument("--detections", help="detections.jsonl path")

    p = sub.add_parser("robustness", help="detect+evaluate over a noise grid")
    add_common(p)
    p.add_argument("--cells", help="comma list of FPR-FNR percent pairs, "
                                   "e.g. '5-5,5-20,20-5,20-20'")
    p.add_argument("--table-d", type=float, default=5.0,
                   help="threshold for the summary table")

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--scene", choices=("cross", "tee", "straight", "curve"),
                   required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--road-width", type=float, default=8.0)
    p.add_argument("--density", type=float, default=30.0)
    p.add_argument("--speed", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--angle", type=float, default=0.0,
                   help="heading of the straight scene, degrees")
    p.add_argument("--radius", type=float, default=150.0,
                   help="curve scene radius, meters")
    p.add_argument("--traj-extent", type=float, default=60.0)

    p = sub.add_parser("measure-noise",
                       help="effective FPR/FNR of predicted labels")
    p.add_argument("--gt-labels", required=True)
    p.add_argument("--pred-labels", required=True)
    p.add_argument("--label-map")

    p = sub.add_parser("debug-images",
                       help="detect with raster dumps (optionally one timestep)")
    add_common(p)
    p.add_argument("--timestep", type=int, action="append",
                   help="restrict to the given raw frame index (repeatable)")
    p.add_argument("--causal", action="store_true")
    p.add_argument("--noise-fpr", type=float, dest="noise_fpr")
    p.add_argument("--noise-fnr", type=float, dest="noise_fnr")
    p.add_argument("--noise-seed", type=int, dest="noise_seed")

    return parser


_HANDLERS = {
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "robustness": cmd_robustness,
    "synth": cmd_synth,
    "measure-noise": cmd_measure_noise,
    "debug-images": cmd_debug_images,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, ParseError, SceneError, FileNotFoundError, OSError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

"""Flat key=value run configuration with include support.

The canonical text form parses back to an identical config (a fixed point),
unknown keys are rejected, and later assignments override earlier ones so
an include can supply defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .detection import DetectorParams
from .noise import NoiseSpec

DEFAULT_D_VALUES = tuple(i * 0.5 for i in range(1, 21))
DEFAULT_CONFUSION_NAMES = ("sidewalk", "parking", "other-ground")


class ConfigError(ValueError):
    """Malformed configuration text or unknown key."""


@dataclass(frozen=True)
class RunConfig:
    # detector
    delta_p: float = 2.0
    delta_a_deg: float = 5.0
    half_window: int = 20
    roi_size: float = 120.0
    resolution: float = 0.16
    min_points: int = 5
    inner_radius: float = 10.0
    outer_radius: float = 40.0
    close_radius: int | None = None
    open_radius: int | None = None
    nms_radius: int | None = None
    harris_k: float = 0.04
    harris_rel_threshold: float = 0.2
    sub_pixel: bool = True
    causal: bool = False
    # evaluation
    d_values: tuple = DEFAULT_D_VALUES
    tp_only_ace: bool = False
    # noise injection
    noise_fpr: float = 0.0
    noise_fnr: float = 0.0
    noise_seed: int = 0
    confusion_classes: tuple = DEFAULT_CONFUSION_NAMES
    # inputs / outputs
    name: str = "seq"
    scan_dir: str | None = None
    label_dir: str | None = None
    pose_file: str | None = None
    gt_pose_file: str | None = None
    graph_file: str | None = None
    label_map_file: str | None = None
    output_dir: str | None = None
    debug_images: bool = False
    workers: int = 1

    def detector_params(self) -> DetectorParams:
        return DetectorParams(
            delta_p=self.delta_p,
            delta_a=math.radians(self.delta_a_deg),
            half_window=self.half_window,
            roi_size=self.roi_size,
            resolution=self.resolution,
            min_points=self.min_points,
            inner_radius=self.inner_radius,
            outer_radius=self.outer_radius,
            close_radius=self.close_radius,
            open_radius=self.open_radius,
            nms_radius=self.nms_radius,
            harris_k=self.harris_k,
            harris_rel_threshold=self.harris_rel_threshold,
            sub_pixel=self.sub_pixel,
        )

    def noise_spec(self, label_map) -> NoiseSpec:
        ids = tuple(label_map.id_of(n) for n in self.confusion_classes)
        return NoiseSpec(fpr=self.noise_fpr, fnr=self.noise_fnr,
                         confusion_classes=ids, seed=self.noise_seed)


# key -> (attribute, kind); kinds drive parsing and echoing
_SCHEMA = {
    "detector.delta_p": ("delta_p", "float"),
    "detector.delta_a_deg": ("delta_a_deg", "float"),
    "detector.half_window": ("half_window", "int"),
    "detector.roi_size": ("roi_size", "float"),
    "detector.resolution": ("resolution", "float"),
    "detector.min_points": ("min_points", "int"),
    "detector.inner_radius": ("inner_radius", "float"),
    "detector.outer_radius": ("outer_radius", "float"),
    "detector.close_radius": ("close_radius", "opt_int"),
    "detector.open_radius": ("open_radius", "opt_int"),
    "detector.nms_radius": ("nms_radius", "opt_int"),
    "detector.harris_k": ("harris_k", "float"),
    "detector.harris_rel_threshold": ("harris_rel_threshold", "float"),
    "detector.sub_pixel": ("sub_pixel", "bool"),
    "detector.causal": ("causal", "bool"),
    "eval.d_values": ("d_values", "float_list"),
    "eval.tp_only_ace": ("tp_only_ace", "bool"),
    "noise.fpr": ("noise_fpr", "float"),
    "noise.fnr": ("noise_fnr", "float"),
    "noise.seed": ("noise_seed", "int"),
    "noise.confusion_classes": ("confusion_classes", "str_list"),
    "name": ("name", "str"),
    "scan_dir": ("scan_dir", "opt_str"),
    "label_dir": ("label_dir", "opt_str"),
    "pose_file": ("pose_file", "opt_str"),
    "gt_pose_file": ("gt_pose_file", "opt_str"),
    "graph_file": ("graph_file", "opt_str"),
    "label_map_file": ("label_map_file", "opt_str"),
    "output_dir": ("output_dir", "opt_str"),
    "debug_images": ("debug_images", "bool"),
    "workers": ("workers", "int"),
}


def _parse_value(kind: str, raw: str, key: str):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            if raw in ("true", "false"):
                return raw == "true"
            raise ValueError("expected true or false")
        if kind == "opt_int":
            return None if raw == "auto" else int(raw)
        if kind in ("str", "opt_str"):
            return raw
        if kind == "float_list":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "str_list":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from None
    raise AssertionError(f"unhandled kind {kind}")


def _format_value(kind: str, value) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "opt_int":
        return "auto" if value is None else str(value)
    if kind == "float_list":
        return ",".join(repr(v) for v in value)
    if kind == "str_list":
        return ",".join(value)
    if kind == "float":
        return repr(value)
    return str(value)


def _collect_lines(path: Path, seen: set) -> list[tuple[str, str, str]]:
    if path in seen:
        raise ConfigError(f"include cycle at {path}")
    seen = seen | {path}
    out = []
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            inc = (path.parent / line[len("include "):].strip()).resolve()
            out.extend(_collect_lines(inc, seen))
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out.append((key.strip(), value.strip(), f"{path}:{lineno}"))
    return out


def parse_config_text(text: str) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            raise ConfigError("includes require a file path context; "
                              "use load_config")
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = (value.strip(), f"line {lineno}")
    return _build(values)


def load_config(path) -> RunConfig:
    entries = _collect_lines(Path(path).resolve(), set())
    values = {}
    for key, value, where in entries:
        values[key] = (value, where)
    return _build(values)


def _build(values: dict) -> RunConfig:
    kwargs = {}
    for key, (raw, where) in values.items():
        if key not in _SCHEMA:
            raise ConfigError(f"{where}: unknown key '{key}'")
        attr, kind = _SCHEMA[key]
        kwargs[attr] = _parse_value(kind, raw, key)
    return RunConfig(**kwargs)


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for key, (attr, kind) in _SCHEMA.items():
        value = getattr(cfg, attr)
        if kind in ("opt_str",) and value is None:
            continue
        lines.append(f"{key} = {_format_value(kind, value)}")
    return "\n".join(lines) + "\n"

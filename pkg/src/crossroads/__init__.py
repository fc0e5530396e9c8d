"""Online road-intersection localization from semantic LiDAR scans."""

__version__ = "0.1.0"

from .geometry import Pose2, Pose3, PointCloud, compose, inverse, pose_delta
from .detection import BinaryGrid, CandidateSet, DetectorParams, KeyframeWindow
from .refinement import Branch, RefinedIntersection
from .evaluation import EvalReport, MatchRecord
from .ingest import LabelMap, RoadGraph, SemanticScan, IntersectionNodeSet
from .noise import NoiseSpec
from .config import RunConfig

__all__ = [
    "__version__",
    "Pose2", "Pose3", "PointCloud", "compose", "inverse", "pose_delta",
    "BinaryGrid", "CandidateSet", "DetectorParams", "KeyframeWindow",
    "Branch", "RefinedIntersection",
    "EvalReport", "MatchRecord",
    "LabelMap", "RoadGraph", "SemanticScan", "IntersectionNodeSet",
    "NoiseSpec", "RunConfig",
]

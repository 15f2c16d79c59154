"""Temporally consistent depth videos from overlapping affine-ambiguous snippet predictions."""

from .coalign import AlignmentSolution, CoalignConfig, merge, objective, solve
from .core import AffineParams, DepthSnippet, DepthVideo, SpaceTag, normalize_snippet
from .errors import RollingAlignError
from .evalkit import FlowField, MetricsReport, evaluate
from .refine import RefineConfig, refine
from .scheduler import SnippetSchedule, build_schedule

__version__ = "0.1.0"

__all__ = [
    "AffineParams", "AlignmentSolution", "CoalignConfig", "DepthSnippet", "DepthVideo",
    "FlowField", "MetricsReport", "RefineConfig", "RollingAlignError", "SnippetSchedule",
    "SpaceTag", "build_schedule", "evaluate", "merge", "normalize_snippet", "objective",
    "refine", "solve",
]

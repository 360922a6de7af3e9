"""Online multi-object tracking with cost-sensitive correlation trackers and
dual (spatial + temporal) attention matching networks."""

from .imaging import BoundingBox, InvalidArgument, iou
from .filter_core import NumericFailure
from .metrics import MetricReport, evaluate
from .pipeline import Pipeline, PipelineConfig, run_sequence
from .tracker import TrackerConfig, init_tracker, track, update_model

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "InvalidArgument", "iou", "NumericFailure", "MetricReport", "evaluate",
    "Pipeline", "PipelineConfig", "run_sequence", "TrackerConfig", "init_tracker", "track", "update_model",
]

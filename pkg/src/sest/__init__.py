"""Event-camera video saliency: simulation, voxel grids, a windowed-attention
model with 3D fusion, the composite training loss and the standard metrics."""

__version__ = "0.1.0"

from .errors import DataError, NumericError, SestError, UsageError  # noqa: E402
from .esim import Frame, SimConfig, simulate  # noqa: E402
from .event_core import (  # noqa: E402
    Event,
    EventStream,
    SensorGeometry,
    VoxelGrid,
    read_events,
    voxelize,
    write_events,
)
from .losses import LossWeights, combined_loss  # noqa: E402
from .metrics import FixationSet, MetricReport, auc_judd, cc, evaluate_all, nss, sim  # noqa: E402
from .model import ModelConfig, SestModel, forward  # noqa: E402

__all__ = [
    "DataError",
    "Event",
    "EventStream",
    "FixationSet",
    "Frame",
    "LossWeights",
    "MetricReport",
    "ModelConfig",
    "NumericError",
    "SensorGeometry",
    "SestError",
    "SestModel",
    "SimConfig",
    "UsageError",
    "VoxelGrid",
    "auc_judd",
    "cc",
    "combined_loss",
    "evaluate_all",
    "forward",
    "nss",
    "read_events",
    "sim",
    "simulate",
    "voxelize",
    "write_events",
]

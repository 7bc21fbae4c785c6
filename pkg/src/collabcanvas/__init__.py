"""collabcanvas: collaboration-structure learning from shared-canvas event logs."""

from ._kernels import NUMBA_ENABLED
from .canvas import CanvasGrid, NeighborContext, replay
from .events import (
    AtlasLabels,
    EventStream,
    PaintEvent,
    SynthConfig,
    generate_synthetic,
    load_atlas,
    parse_events,
    write_events,
)
from .model import EmbeddingTable, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "AtlasLabels",
    "CanvasGrid",
    "EmbeddingTable",
    "EventStream",
    "NeighborContext",
    "PaintEvent",
    "SynthConfig",
    "TrainConfig",
    "generate_synthetic",
    "load_atlas",
    "parse_events",
    "replay",
    "train",
    "write_events",
    "__version__",
]

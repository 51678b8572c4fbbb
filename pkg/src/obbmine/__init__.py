"""obbmine: pseudo-label mining for sparsely annotated oriented object
detection, with a synthetic dense-scene benchmark harness."""

from .backend import BACKEND
from .errors import DataError, GenerationError, UsageError
from .geometry import RotatedBox, rotated_iou

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DataError",
    "GenerationError",
    "UsageError",
    "RotatedBox",
    "rotated_iou",
    "__version__",
]

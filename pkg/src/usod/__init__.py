"""Unsupervised salient object detection core: curriculum saliency distilling,
affinity pixel refinement, self-rectify pseudo-labels, adapter-tuning and
SOD metrics, exercised by per-pixel optimization at desk scale."""

from ._accel import backend
from .core import BinaryMask, Image, NetpbmError, NumericalError, SaliencyMap
from .curriculum import CurriculumSchedule, LossResult

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "CurriculumSchedule",
    "Image",
    "LossResult",
    "NetpbmError",
    "NumericalError",
    "SaliencyMap",
    "backend",
]

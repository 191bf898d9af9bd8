"""Progressive curriculum for saliency distilling.

Pixels whose prediction sits within ``p`` of 0.5 are treated as hard and
removed from backpropagation; ``p`` shrinks linearly with the epoch until
every pixel participates.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import BinaryMask, Gradient, _check_same_shape, as_map_array

__all__ = [
    "CurriculumSchedule",
    "LossResult",
    "hard_sample_mask",
    "pcl_sd_loss",
    "saliency_distilling_loss",
    "threshold_at",
]


@dataclass(frozen=True)
class CurriculumSchedule:
    p0: float = 0.2
    slope: float = 0.6
    total_epochs: int = 20

    def __post_init__(self):
        if not 0.0 <= self.p0 <= 0.5:
            raise ValueError(f"p0 must lie in [0, 0.5], got {self.p0}")
        if self.slope < 0:
            raise ValueError(f"slope must be >= 0, got {self.slope}")
        if int(self.total_epochs) != self.total_epochs or self.total_epochs < 1:
            raise ValueError(f"total_epochs must be an integer >= 1, got {self.total_epochs}")


@dataclass(frozen=True)
class LossResult:
    value: float
    gradient: Gradient


def _decimal(x: float) -> Fraction:
    # Exact rational of the shortest decimal repr, so 0.2 - 0.6 * 1/3 is 0, not 3e-17.
    return Fraction(repr(float(x)))


def threshold_at(schedule: CurriculumSchedule, epoch: int) -> float:
    """Hard-sample threshold ``max(0, p0 - slope * epoch / total_epochs)``."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    p = _decimal(schedule.p0) - _decimal(schedule.slope) * Fraction(epoch) / schedule.total_epochs
    return float(max(Fraction(0), p))


def hard_sample_mask(s, p: float) -> BinaryMask:
    """1 for easy pixels, 0 for hard ones (``|S - 0.5| < p``, strictly)."""
    if not 0.0 <= p <= 0.5:
        raise ValueError(f"threshold must lie in [0, 0.5], got {p}")
    s = as_map_array(s)
    return BinaryMask(~(np.abs(s - 0.5) < p))


def pcl_sd_loss(s, mask) -> LossResult:
    """Masked distilling loss ``0.5 - mean |M * S - 0.5|`` and its gradient.

    Masked pixels add a constant 0.5 to the sum and receive zero gradient;
    ``sign(0)`` is taken as 0 at the kink ``S = 0.5``.
    """
    s = as_map_array(s)
    m = np.asarray(mask.bits if isinstance(mask, BinaryMask) else mask, dtype=bool)
    _check_same_shape(s, m)
    n = s.size
    centered = np.where(m, s, 0.0) - 0.5
    value = 0.5 - float(np.abs(centered).sum()) / n
    grad = np.where(m, -np.sign(centered) / n, 0.0)
    return LossResult(value, grad)


def saliency_distilling_loss(s) -> LossResult:
    """Unmasked distilling loss ``0.5 - mean |S - 0.5|``."""
    s = as_map_array(s)
    centered = s - 0.5
    return LossResult(0.5 - float(np.abs(centered).sum()) / s.size, -np.sign(centered) / s.size)

"""Real-time pixel refiner: local image-guided affinity propagation.

Each pixel's affinity to its 8 neighbours mixes a softmax over colour
distances with a small softmax over spatial distances. Refinement replaces
every pixel with the affinity-weighted average of its neighbours, which is
a convex combination, so [0, 1] maps stay in range and constants are fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import SaliencyMap, _check_same_shape, as_image_array, as_map_array

__all__ = [
    "AffinityField",
    "RefinerConfig",
    "affinity_kernel",
    "position_sigma",
    "prior_rectify",
    "refine",
]


@dataclass(frozen=True)
class RefinerConfig:
    omega1: float = 1.0
    omega2: float = 1.0
    omega3: float = 0.01
    iterations: int = 10
    sigma_floor: float = 1e-6

    def __post_init__(self):
        if not (self.omega1 > 0 and self.omega2 > 0):
            raise ValueError("omega1 and omega2 must be > 0")
        if self.omega3 < 0:
            raise ValueError("omega3 must be >= 0")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be an integer >= 1")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be > 0")


@dataclass(frozen=True, eq=False)
class AffinityField:
    """Per-pixel neighbour weights, ``(height, width, 8)``; missing neighbours are 0."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 3 or w.shape[2] != 8:
            raise ValueError(f"affinity weights must be (H, W, 8), got {w.shape}")
        valid = kernels.neighbor_valid(*w.shape[:2])
        if np.any(w < 0) or np.any(w[~valid] != 0):
            raise ValueError("weights must be >= 0 and zero for missing neighbours")
        if np.any(np.abs(w.sum(axis=2) - 1.0) > 1e-9):
            raise ValueError("per-pixel weights must sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def height(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    def neighbors(self, row: int, col: int):
        """Yield ``((drow, dcol), weight)`` for each existing neighbour."""
        for k, (dr, dc) in enumerate(kernels.OFFSETS):
            r, c = row + dr, col + dc
            if 0 <= r < self.height and 0 <= c < self.width:
                yield (int(dr), int(dc)), float(self.weights[row, col, k])


def position_sigma() -> float:
    """Standard deviation of the 8-neighbour distances {1 x4, sqrt(2) x4}."""
    return float(np.std(np.hypot(kernels.OFFSETS[:, 0], kernels.OFFSETS[:, 1])))


def affinity_kernel(img, cfg: RefinerConfig = RefinerConfig()) -> AffinityField:
    values = as_image_array(img)
    if values.shape[0] * values.shape[1] < 2:
        raise ValueError("affinity needs an image with at least 2 pixels")
    sigma_f = max(float(np.std(values)), cfg.sigma_floor)
    sigma_p = max(position_sigma(), cfg.sigma_floor)
    weights = kernels.affinity_weights(values, cfg.omega1, cfg.omega2, cfg.omega3, sigma_f, sigma_p)
    return AffinityField(weights)


def refine(s, aff: AffinityField, iterations: int) -> SaliencyMap:
    s = as_map_array(s)
    _check_same_shape(s, aff.weights)
    if int(iterations) != iterations or iterations < 1:
        raise ValueError(f"iterations must be an integer >= 1, got {iterations}")
    return SaliencyMap(kernels.refine_passes(s, aff.weights, iterations))


def prior_rectify(s, img, cfg: RefinerConfig = RefinerConfig()) -> SaliencyMap:
    s = as_map_array(s)
    values = as_image_array(img)
    _check_same_shape(s, values)
    return refine(s, affinity_kernel(values, cfg), cfg.iterations)

"""Self-rectify pseudo-label refinement: convex fusion of three label sources."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SaliencyMap, _check_same_shape, as_map_array

__all__ = ["SprWeights", "posterior_rectify", "spr_update"]


@dataclass(frozen=True)
class SprWeights:
    """Weights of prior rectification, posterior rectification and previous label."""

    lambda1: float = 0.2
    lambda2: float = 0.6
    lambda3: float = 0.2

    def __post_init__(self):
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if min(lams) < 0:
            raise ValueError(f"SPR weights must be non-negative, got {lams}")
        if abs(sum(lams) - 1.0) > 1e-12:
            raise ValueError(f"SPR weights must sum to 1, got {lams} (sum {sum(lams)!r})")

    @classmethod
    def parse(cls, text: str) -> SprWeights:
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected three comma-separated weights, got {text!r}")
        return cls(*parts)


def posterior_rectify(model_prediction) -> SaliencyMap:
    """The model's own prediction serves as the posterior rectification."""
    if isinstance(model_prediction, SaliencyMap):
        return model_prediction
    return SaliencyMap(model_prediction)


def spr_update(r_pri, r_post, g_pre, w: SprWeights = SprWeights()) -> SaliencyMap:
    """Refined label ``l1 * R_pri + l2 * R_post + l3 * G_pre``."""
    a, b, c = as_map_array(r_pri), as_map_array(r_post), as_map_array(g_pre)
    _check_same_shape(a, b, c)
    fused = w.lambda1 * a + w.lambda2 * b + w.lambda3 * c
    # rounding guard only: the exact value already lies between min and max
    lo = np.minimum(np.minimum(a, b), c)
    hi = np.maximum(np.maximum(a, b), c)
    return SaliencyMap(np.clip(fused, lo, hi))

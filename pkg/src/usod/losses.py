"""Training objectives for the cue extractor and the detector, with gradients.

Every loss returns a ``LossResult`` whose gradient is taken with respect to
the prediction ``S`` only; auxiliary inputs (the transformed prediction,
pseudo-labels, boundary masks) are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import BinaryMask, Image, _check_same_shape, as_image_array, as_map_array
from .curriculum import LossResult, pcl_sd_loss

__all__ = [
    "BCE_EPS",
    "LossWeights",
    "ScaleRecipe",
    "ScaledField",
    "TextureField",
    "bce_loss",
    "bilinear_resize",
    "bilinear_resize_adjoint",
    "boundary_mask",
    "btm_loss",
    "iou_loss",
    "random_scale_transform",
    "sc_loss",
    "sc_loss_round_trip",
    "sce_total",
    "sd_total",
    "texture_vector",
]

BCE_EPS = 1e-7
SCALE_LIMITS = (0.5, 2.0)


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 0.05

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True, eq=False)
class TextureField:
    """Unit-norm (or zero) 8-vectors of centre-minus-neighbour differences."""

    vectors: np.ndarray

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]


def _texture_source(field) -> np.ndarray:
    if isinstance(field, Image):
        return field.values.mean(axis=2)
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim == 3:
        return as_image_array(arr).mean(axis=2)
    return as_map_array(arr)


def _require_3x3(arr: np.ndarray) -> None:
    if arr.shape[0] < 3 or arr.shape[1] < 3:
        raise ValueError(f"field must be at least 3x3, got {arr.shape[1]}x{arr.shape[0]}")


def texture_vector(field) -> TextureField:
    """Texture of a map, or of an image after averaging its channels."""
    src = _texture_source(field)
    _require_3x3(src)
    t, _ = kernels.texture_vectors(src)
    return TextureField(t)


def boundary_mask(s, threshold: float = 0.1) -> BinaryMask:
    """Pixels whose largest absolute difference to a neighbour exceeds ``threshold``."""
    s = as_map_array(s)
    _require_3x3(s)
    h, w = s.shape
    valid = kernels.neighbor_valid(h, w)
    biggest = np.zeros((h, w))
    for k, (dr, dc) in enumerate(kernels.OFFSETS):
        diff = np.abs(s - kernels._shifted(s, dr, dc))
        biggest = np.maximum(biggest, np.where(valid[:, :, k], diff, 0.0))
    return BinaryMask(biggest > threshold)


def btm_loss(s, img, mask: BinaryMask | None = None, threshold: float = 0.1) -> LossResult:
    """Boundary-averaged inner product of saliency and image texture vectors.

    ``img`` may be a precomputed ``TextureField``. ``mask`` defaults to
    ``boundary_mask(s, threshold)``; it is a selector and carries no gradient.
    """
    s = as_map_array(s)
    _require_3x3(s)
    if isinstance(img, TextureField):
        tex_img = img.vectors
    else:
        src = _texture_source(img)
        _check_same_shape(s, src)
        tex_img, _ = kernels.texture_vectors(src)
    _check_same_shape(s, tex_img)
    if mask is None:
        mask = boundary_mask(s, threshold)
    bits = np.asarray(mask.bits if isinstance(mask, BinaryMask) else mask, dtype=bool)
    _check_same_shape(s, bits)
    value, grad = kernels.btm_value_grad(s, tex_img, bits)
    return LossResult(value, grad)


def sc_loss(s, s_hat) -> LossResult:
    """Mean absolute deviation between a prediction and its transformed twin."""
    s, s_hat = as_map_array(s), as_map_array(s_hat)
    _check_same_shape(s, s_hat)
    diff = s - s_hat
    n = s.size
    return LossResult(float(np.abs(diff).sum()) / n, np.sign(diff) / n)


def sc_loss_round_trip(s, recipe: "ScaleRecipe") -> LossResult:
    """Consistency against ``recipe.round_trip(s)``, differentiated through both paths.

    ``sc_loss`` holds the transformed twin fixed; here the twin is a function
    of ``s`` as well, so its contribution ``-R^T sign(S - R S) / N`` is added.
    """
    s = as_map_array(s)
    res = sc_loss(s, recipe.round_trip(s))
    return LossResult(res.value, res.gradient - recipe.round_trip_adjoint(res.gradient))


def iou_loss(s, g) -> LossResult:
    s, g = as_map_array(s), as_map_array(g)
    _check_same_shape(s, g)
    inter = float((s * g).sum())
    union = float((s + g - s * g).sum())
    if union <= 0.0:
        raise ValueError("IoU is undefined when both maps are all zero")
    value = 1.0 - inter / union
    # -(G U - (1 - G) I) / U^2, arranged so a tiny union cannot underflow to 0/0
    grad = -(g - (1.0 - g) * (inter / union)) / union
    return LossResult(value, grad)


def bce_loss(s, g) -> LossResult:
    s, g = as_map_array(s), as_map_array(g)
    _check_same_shape(s, g)
    n = s.size
    st = np.clip(s, BCE_EPS, 1.0 - BCE_EPS)
    value = -float((g * np.log(st) + (1.0 - g) * np.log(1.0 - st)).sum()) / n
    inside = (s > BCE_EPS) & (s < 1.0 - BCE_EPS)
    grad = np.where(inside, -(g / st - (1.0 - g) / (1.0 - st)) / n, 0.0)
    return LossResult(value, grad)


def sce_total(s, s_hat, img, w: LossWeights, mask) -> LossResult:
    """Cue-extractor objective: curriculum distilling + gamma * BTM + consistency."""
    parts = (pcl_sd_loss(s, mask), btm_loss(s, img), sc_loss(s, s_hat))
    coeffs = (1.0, w.gamma, 1.0)
    value = sum(c * p.value for c, p in zip(coeffs, parts))
    grad = sum(c * p.gradient for c, p in zip(coeffs, parts))
    return LossResult(value, grad)


def sd_total(s, s_hat, g) -> LossResult:
    """Detector objective: IoU against the pseudo-label + consistency."""
    a, b = iou_loss(s, g), sc_loss(s, s_hat)
    return LossResult(a.value + b.value, a.gradient + b.gradient)


# --- random scaling ----------------------------------------------------------


def _axis_weights(n_in: int, n_out: int):
    if n_in == 1 or n_out == 1:
        zeros = np.zeros(n_out, dtype=np.int64)
        return zeros, zeros, np.zeros(n_out)
    x = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(x).astype(np.int64), n_in - 2)
    return i0, i0 + 1, x - i0


def bilinear_resize(field: np.ndarray, height: int, width: int) -> np.ndarray:
    """Corner-aligned bilinear resampling of a 2-D or 3-D field."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape[:2] == (height, width):
        return field.copy()
    r0, r1, tr = _axis_weights(field.shape[0], height)
    c0, c1, tc = _axis_weights(field.shape[1], width)
    extra = (None,) * (field.ndim - 2)
    tr = tr[(slice(None), None) + extra]
    tc = tc[(None, slice(None)) + extra]
    rows = field[r0] + tr * (field[r1] - field[r0])
    return rows[:, c0] + tc * (rows[:, c1] - rows[:, c0])


def _scatter_axis(g: np.ndarray, n_in: int, axis: int) -> np.ndarray:
    i0, i1, t = _axis_weights(n_in, g.shape[axis])
    g = np.moveaxis(g, axis, 0)
    shape = (-1,) + (1,) * (g.ndim - 1)
    out = np.zeros((n_in,) + g.shape[1:])
    np.add.at(out, i0, g * (1.0 - t).reshape(shape))
    np.add.at(out, i1, g * t.reshape(shape))
    return np.moveaxis(out, 0, axis)


def bilinear_resize_adjoint(grad: np.ndarray, height: int, width: int) -> np.ndarray:
    """Transpose of ``bilinear_resize`` onto a ``(height, width)`` source grid.

    Satisfies ``<resize(x), y> == <x, resize_adjoint(y)>``; used to carry a
    gradient from the resampled field back to the original one.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape[:2] == (height, width):
        return grad.copy()
    return _scatter_axis(_scatter_axis(grad, width, 1), height, 0)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class ScaleRecipe:
    """Shapes of a rescaling, able to map predictions either way."""

    source_shape: tuple[int, int]
    scaled_shape: tuple[int, int]
    scale: float

    def forward(self, field) -> np.ndarray:
        return np.clip(bilinear_resize(field, *self.scaled_shape), 0.0, 1.0)

    def inverse(self, field) -> np.ndarray:
        """Resample a prediction made at the scaled size back to the source size."""
        return np.clip(bilinear_resize(field, *self.source_shape), 0.0, 1.0)

    def round_trip(self, field) -> np.ndarray:
        """Down to the scaled size and back: the consistency target for ``field``."""
        return self.inverse(self.forward(field))

    def round_trip_adjoint(self, grad) -> np.ndarray:
        # the clips are inactive on [0, 1] inputs (bilinear weights are convex)
        inner = bilinear_resize_adjoint(grad, *self.scaled_shape)
        return bilinear_resize_adjoint(inner, *self.source_shape)


@dataclass(frozen=True, eq=False)
class ScaledField:
    values: np.ndarray
    recipe: ScaleRecipe


def random_scale_transform(
    field,
    scale: float | None = None,
    seed=None,
    scale_range: tuple[float, float] = SCALE_LIMITS,
) -> ScaledField:
    """Bilinearly rescale ``field`` by ``scale`` (drawn from ``scale_range`` if None)."""
    lo, hi = scale_range
    if not SCALE_LIMITS[0] <= lo <= hi <= SCALE_LIMITS[1]:
        raise ValueError(f"scale range must lie within {SCALE_LIMITS}, got {scale_range}")
    if scale is None:
        scale = float(np.random.default_rng(seed).uniform(lo, hi))
    if not lo <= scale <= hi:
        raise ValueError(f"scale {scale} outside {scale_range}")
    arr = np.asarray(field, dtype=np.float64)
    h, w = arr.shape[:2]
    out_h, out_w = _round_half_up(scale * h), _round_half_up(scale * w)
    if out_h < 3 or out_w < 3:
        raise ValueError(f"scaled size {out_w}x{out_h} is below 3x3")
    recipe = ScaleRecipe((h, w), (out_h, out_w), float(scale))
    return ScaledField(recipe.forward(arr), recipe)

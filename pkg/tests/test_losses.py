import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from usod.core import BinaryMask, Image
from usod.curriculum import pcl_sd_loss
from usod.losses import (
    BCE_EPS,
    LossWeights,
    bce_loss,
    bilinear_resize,
    bilinear_resize_adjoint,
    boundary_mask,
    btm_loss,
    iou_loss,
    random_scale_transform,
    sc_loss,
    sc_loss_round_trip,
    sce_total,
    sd_total,
    texture_vector,
)

unit = st.floats(0, 1, allow_nan=False)


# --- texture and boundaries --------------------------------------------------


def test_texture_constant_is_zero():
    assert not texture_vector(np.full((4, 5), 0.3)).vectors.any()


def test_texture_vertical_step():
    step = np.array([[0.0, 0.0, 1.0]] * 3)
    t = texture_vector(step).vectors
    # centre pixel: E, NE, SE neighbours are 1 brighter; N, S, W, NW, SW equal
    expected = np.array([0, -1, -1, -1, 0, 0, 0, 0]) / math.sqrt(3)
    assert np.allclose(t[1, 1], expected, atol=1e-15)
    assert not t[:, 0].any()


def test_texture_matches_oracle_and_is_unit():
    rng = np.random.default_rng(0)
    f = rng.random((5, 6))
    t = texture_vector(f).vectors
    ref = oracles.texture(f.tolist())
    for (r, c), vec in ref.items():
        assert np.allclose(t[r, c], vec, atol=1e-15)
    norms = np.linalg.norm(t, axis=2)
    assert np.all(np.abs(norms[norms > 0] - 1.0) <= 1e-12)
    assert np.all(np.abs(t) <= 1.0)


def test_texture_averages_channels():
    rng = np.random.default_rng(1)
    img = rng.random((4, 4, 3))
    assert np.array_equal(texture_vector(Image(img)).vectors, texture_vector(img.mean(axis=2)).vectors)


def test_texture_too_small():
    with pytest.raises(ValueError):
        texture_vector(np.zeros((2, 5)))


def test_boundary_mask_square_ring():
    s = np.zeros((5, 5))
    s[1:3, 1:3] = 1.0
    bits = boundary_mask(s).bits
    expected = np.zeros((5, 5), dtype=bool)
    expected[0:4, 0:4] = True  # the square plus its outer ring
    assert np.array_equal(bits, expected)


def test_boundary_mask_constant_and_high_threshold():
    assert not boundary_mask(np.full((3, 3), 0.7)).bits.any()
    rng = np.random.default_rng(2)
    assert not boundary_mask(rng.uniform(0.01, 0.99, (6, 6)), threshold=1.0).bits.any()


# --- BTM ---------------------------------------------------------------------


def test_btm_against_oracle_on_step():
    img = np.zeros((5, 5))
    img[:, 3:] = 1.0
    s = np.zeros((5, 5))
    s[:, 2:] = 0.8
    bits = boundary_mask(s).bits
    got = btm_loss(s, Image(img)).value
    assert got == pytest.approx(oracles.btm_value(s.tolist(), img.tolist(), bits), abs=1e-10)


def test_btm_random_against_oracle():
    rng = np.random.default_rng(3)
    for _ in range(5):
        s, img = rng.random((6, 7)), rng.random((6, 7, 3))
        bits = boundary_mask(s).bits
        want = oracles.btm_value(s.tolist(), img.mean(axis=2).tolist(), bits)
        assert btm_loss(s, Image(img)).value == pytest.approx(want, abs=1e-10)


def test_btm_empty_boundary():
    r = btm_loss(np.full((4, 4), 0.5), Image(np.random.default_rng(0).random((4, 4))))
    assert r.value == 0.0 and not r.gradient.any()


def test_btm_orthogonal_textures():
    # centre of S: all eight differences equal; centre of the image: +-0.5
    # alternating, so the two texture vectors are orthogonal
    s = np.zeros((3, 3))
    s[1, 1] = 1.0
    img = np.array([[1.0, 0.0, 1.0], [0.0, 0.5, 0.0], [1.0, 0.0, 1.0]])
    centre = np.zeros((3, 3), dtype=bool)
    centre[1, 1] = True
    assert btm_loss(s, Image(img), mask=BinaryMask(centre)).value == 0.0


@given(arrays(np.float64, (4, 4), elements=unit), arrays(np.float64, (4, 4), elements=unit))
def test_btm_in_range(s, img):
    assert -1.0 <= btm_loss(s, Image(img)).value <= 1.0


def test_btm_accepts_precomputed_texture():
    rng = np.random.default_rng(4)
    s, img = rng.random((5, 5)), rng.random((5, 5))
    a = btm_loss(s, Image(img))
    b = btm_loss(s, texture_vector(img))
    assert a.value == b.value and np.array_equal(a.gradient, b.gradient)


# --- pointwise losses --------------------------------------------------------


def test_sc_examples():
    assert sc_loss(np.full((2, 2), 0.3), np.full((2, 2), 0.3)).value == 0.0
    assert sc_loss(np.ones((2, 2)), np.zeros((2, 2))).value == 1.0
    assert sc_loss(np.array([[0.2, 0.8]]), np.array([[0.4, 0.4]])).value == pytest.approx(0.3, abs=1e-15)


@given(arrays(np.float64, (3, 4), elements=unit), arrays(np.float64, (3, 4), elements=unit))
def test_sc_symmetric_and_bounded(a, b):
    assert sc_loss(a, b).value == sc_loss(b, a).value
    assert 0.0 <= sc_loss(a, b).value <= 1.0
    assert sc_loss(a, a).value == 0.0


def test_iou_examples():
    g = np.array([[1.0, 0.0], [1.0, 1.0]])
    assert iou_loss(g, g).value == 0.0
    assert iou_loss(1 - g, g).value == 1.0
    assert iou_loss(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]])).value == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        iou_loss(np.zeros((2, 2)), np.zeros((2, 2)))


@given(arrays(np.float64, (3, 3), elements=unit), arrays(np.float64, (3, 3), elements=unit))
def test_iou_symmetric_and_bounded(a, b):
    if (a + b - a * b).sum() <= 0:
        return
    v = iou_loss(a, b).value
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou_loss(b, a).value, abs=1e-15)


def test_bce_examples():
    g = np.array([[1.0, 0.0]])
    assert bce_loss(g, g).value == pytest.approx(-math.log(1 - BCE_EPS), rel=1e-9)
    for gt in (g, 1 - g):
        assert bce_loss(np.full((1, 2), 0.5), gt).value == pytest.approx(math.log(2), abs=1e-15)
    assert bce_loss(np.array([[0.9]]), np.array([[1.0]])).value == pytest.approx(-math.log(0.9), abs=1e-15)


def test_bce_not_symmetric():
    a, b = np.array([[0.9, 0.2]]), np.array([[1.0, 0.0]])
    assert bce_loss(a, b).value != bce_loss(b, a).value


@given(arrays(np.float64, (2, 3), elements=unit), arrays(np.float64, (2, 3), elements=unit))
def test_bce_non_negative_and_finite(s, g):
    r = bce_loss(s, g)
    assert r.value >= 0.0 and np.all(np.isfinite(r.gradient))


def test_composites_are_sums():
    rng = np.random.default_rng(5)
    s, s_hat, g, img = rng.random((4, 6, 6))
    mask = BinaryMask(rng.random((6, 6)) < 0.5)
    w = LossWeights(0.3)
    total = sce_total(s, s_hat, Image(img), w, mask)
    parts = pcl_sd_loss(s, mask).value + 0.3 * btm_loss(s, Image(img)).value + sc_loss(s, s_hat).value
    assert abs(total.value - parts) <= 1e-12
    sd = sd_total(s, s_hat, g)
    assert abs(sd.value - iou_loss(s, g).value - sc_loss(s, s_hat).value) <= 1e-12


def test_composite_degenerate_cases():
    rng = np.random.default_rng(6)
    s, img = rng.random((2, 5, 5))
    mask = BinaryMask(rng.random((5, 5)) < 0.5)
    a = sce_total(s, s, Image(img), LossWeights(0.0), mask)
    b = pcl_sd_loss(s, mask)
    assert a.value == b.value and np.array_equal(a.gradient, b.gradient)
    g = (rng.random((5, 5)) < 0.5).astype(float)
    g[0, 0] = 1.0
    assert sd_total(g, g, g).value == 0.0


# --- gradients ---------------------------------------------------------------


def _smooth_point(rng, shape=(5, 6)):
    return rng.uniform(0.05, 0.95, size=shape)


def _away(a, b, gap=1e-3):
    return np.where(np.abs(a - b) < gap, np.clip(b + 0.1, 0, 1), a)


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    s_hat, g, img = _smooth_point(rng), rng.random((5, 6)), rng.random((5, 6, 3))
    s = _away(_smooth_point(rng), s_hat)
    s = np.where(np.abs(s - 0.5) < 1e-3, 0.3, s)
    frozen = boundary_mask(s)
    tex = texture_vector(Image(img))
    cases = {
        "btm": lambda x: btm_loss(x, tex, mask=frozen),
        "sc": lambda x: sc_loss(x, s_hat),
        "iou": lambda x: iou_loss(x, g),
        "bce": lambda x: bce_loss(x, g),
        "sd": lambda x: sd_total(x, s_hat, g),
    }
    for name, fn in cases.items():
        fd = oracles.central_difference(lambda x: fn(x).value, s)
        assert oracles.relative_error(fn(s).gradient, fd) < 1e-5, name


def _boundary_stable(s, threshold=0.1, margin=1e-4):
    """No neighbour difference sits close enough to the threshold to flip under FD steps."""
    padded = np.pad(s, 1, mode="edge")
    h, w = s.shape
    for dr, dc in oracles.NEIGHBOURS:
        diff = np.abs(s - padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w])
        if np.any(np.abs(diff - threshold) < margin):
            return False
    return True


def test_sce_total_gradient_with_default_boundary():
    rng = np.random.default_rng(9)
    s_hat, img = _smooth_point(rng), rng.random((5, 6))
    while True:
        s = _away(_smooth_point(rng), s_hat)
        if _boundary_stable(s) and np.all(np.abs(s - 0.5) > 1e-3):
            break
    mask = BinaryMask(rng.random(s.shape) < 0.6)
    fn = lambda x: sce_total(x, s_hat, Image(img), LossWeights(0.05), mask)  # noqa: E731
    fd = oracles.central_difference(lambda x: fn(x).value, s)
    assert oracles.relative_error(fn(s).gradient, fd) < 1e-5


def test_round_trip_consistency_gradient():
    rng = np.random.default_rng(12)
    s = _smooth_point(rng, (7, 8))
    recipe = random_scale_transform(s, scale=0.7).recipe
    fn = lambda x: sc_loss_round_trip(x, recipe)  # noqa: E731
    fd = oracles.central_difference(lambda x: fn(x).value, s)
    assert oracles.relative_error(fn(s).gradient, fd) < 1e-5


# --- rescaling ---------------------------------------------------------------


def test_unit_scale_is_identity():
    f = np.random.default_rng(0).random((6, 7))
    assert np.array_equal(random_scale_transform(f, scale=1.0).values, f)


def test_constant_survives_round_trip():
    f = np.full((5, 9), 0.37)
    out = random_scale_transform(f, scale=2.0)
    assert np.all(out.values == 0.37)
    assert np.all(out.recipe.inverse(out.values) == 0.37)


def test_ramp_preserved_at_half_scale():
    h, w = 9, 13
    rows, cols = np.mgrid[0:h, 0:w]
    ramp = (0.3 * rows / (h - 1) + 0.6 * cols / (w - 1))
    out = random_scale_transform(ramp, scale=0.5)
    oh, ow = out.recipe.scaled_shape
    r2, c2 = np.mgrid[0:oh, 0:ow]
    want = 0.3 * r2 / (oh - 1) + 0.6 * c2 / (ow - 1)
    assert np.max(np.abs(out.values - want)) <= 1e-12


def test_scale_shape_and_range_errors():
    f = np.zeros((10, 11))
    assert random_scale_transform(f, scale=1.25).values.shape == (13, 14)
    with pytest.raises(ValueError):
        random_scale_transform(np.zeros((4, 4)), scale=0.5)
    with pytest.raises(ValueError):
        random_scale_transform(f, scale=2.5)
    with pytest.raises(ValueError):
        random_scale_transform(f, scale_range=(0.1, 1.0))


def test_seeded_scale_draw_is_deterministic():
    f = np.zeros((20, 20))
    a = random_scale_transform(f, seed=3, scale_range=(0.75, 1.25)).recipe
    b = random_scale_transform(f, seed=3, scale_range=(0.75, 1.25)).recipe
    assert a == b and 0.75 <= a.scale <= 1.25


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.integers(3, 12), st.integers(3, 12), st.integers(3, 12), st.integers(0, 99))
def test_resize_adjoint_identity(h, w, oh, ow, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random((h, w)), rng.random((oh, ow))
    lhs = float((bilinear_resize(x, oh, ow) * y).sum())
    rhs = float((x * bilinear_resize_adjoint(y, h, w)).sum())
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))

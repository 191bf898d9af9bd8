import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from usod.adapter import (
    AdapterBlock,
    backward,
    forward,
    load_block,
    save_block,
    train_adapter,
)
from usod.core import NumericalError


def _random_block(rng, d=4, zero=False):
    bw, bb = rng.normal(size=(d, d)), rng.normal(size=d)
    if zero:
        return AdapterBlock.with_zero_adapter(bw, bb)
    return AdapterBlock(bw, bb, rng.normal(size=(d, d)), rng.normal(size=d))


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_zero_adapter_is_bit_exact(seed, d):
    rng = np.random.default_rng(seed)
    block = _random_block(rng, d, zero=True)
    f = rng.normal(size=d) * 10.0 ** rng.integers(-5, 5)
    assert np.array_equal(forward(block, f), block.base(f))


def test_identity_pair_doubles():
    eye = np.eye(3)
    block = AdapterBlock(eye, np.zeros(3), eye, np.zeros(3))
    f = np.array([0.5, -2.0, 3.0])
    assert np.array_equal(forward(block, f), 2 * f)


def test_hand_multiplied_first_column():
    bw = np.array([[1.0, 2, 3], [4, 5, 6], [7, 8, 9]])
    aw = np.array([[0.5, 0, 0], [0, 1, 0], [-1, 0, 2]])
    bb, ab = np.array([0.1, 0.2, 0.3]), np.array([1.0, 1.0, 1.0])
    out = forward(AdapterBlock(bw, bb, aw, ab), np.array([1.0, 0.0, 0.0]))
    # first columns plus both biases
    assert out.tolist() == [1 + 0.1 + 0.5 + 1, 4 + 0.2 + 0 + 1, 7 + 0.3 - 1 + 1]


def test_backward_base_gradients_are_zero():
    rng = np.random.default_rng(0)
    block = _random_block(rng)
    g = backward(block, rng.normal(size=4), rng.normal(size=4))
    assert not g.base_weight.any() and not g.base_bias.any()
    z = backward(block, rng.normal(size=4), np.zeros(4))
    assert not (z.adapter_weight.any() or z.adapter_bias.any())


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    block = _random_block(rng)
    f, up = rng.normal(size=4), rng.normal(size=4)

    def loss_w(w):
        return float(up @ forward(dataclasses.replace(block, adapter_weight=w), f))

    def loss_b(b):
        return float(up @ forward(dataclasses.replace(block, adapter_bias=b), f))

    grads = backward(block, f, up)
    fd_w = oracles.central_difference(loss_w, block.adapter_weight)
    fd_b = oracles.central_difference(loss_b, block.adapter_bias)
    assert oracles.relative_error(grads.adapter_weight, fd_w) < 1e-6
    assert oracles.relative_error(grads.adapter_bias, fd_b) < 1e-6
    assert np.allclose(grads.adapter_weight, np.outer(up, f), rtol=0, atol=0)


def test_linearity():
    rng = np.random.default_rng(1)
    block = _random_block(rng)
    f1, f2 = rng.normal(size=(2, 4))
    a, b = 0.7, -1.3
    bias = block.base_bias + block.adapter_bias
    lhs = forward(block, a * f1 + b * f2) - bias
    rhs = a * (forward(block, f1) - bias) + b * (forward(block, f2) - bias)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_dimension_mismatch():
    block = _random_block(np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward(block, np.zeros(3))
    with pytest.raises(ValueError):
        AdapterBlock(np.eye(3), np.zeros(3), np.eye(2), np.zeros(2))


def test_already_optimal_stays_at_zero():
    rng = np.random.default_rng(2)
    block = _random_block(rng, zero=True)
    feats = rng.normal(size=(6, 4))
    _, trace = train_adapter(block, [(f, block.base(f)) for f in feats], 20, 0.1)
    assert all(v == 0.0 for v in trace)


def test_constant_offset_recovery_and_freeze():
    rng = np.random.default_rng(3)
    block = _random_block(rng, zero=True)
    c = np.array([0.5, -1.0, 2.0, 0.25])
    feats = rng.normal(size=(16, 4))
    trained, trace = train_adapter(block, [(f, block.base(f) + c) for f in feats], 2000, 0.1)
    assert trace[-1] < 1e-8
    assert len(trace) == 2001
    # closed-form least squares: zero weight correction, bias exactly c
    assert np.allclose(trained.adapter_bias, c, atol=1e-4)
    assert np.array_equal(trained.base_weight, block.base_weight)
    assert np.array_equal(trained.base_bias, block.base_bias)
    probe = rng.normal(size=(5, 4))
    rezeroed = trained.zero_adapter()
    for f in probe:
        assert np.array_equal(forward(rezeroed, f), block.base(f))


def test_training_argument_checks():
    block = _random_block(np.random.default_rng(4), zero=True)
    data = [(np.zeros(4), np.zeros(4))]
    with pytest.raises(ValueError):
        train_adapter(block, data, 0, 0.1)
    with pytest.raises(ValueError):
        train_adapter(block, data, 5, 0.0)
    with pytest.raises(ValueError):
        train_adapter(block, [(np.zeros(3), np.zeros(3))], 5, 0.1)


def test_divergence_raises():
    block = _random_block(np.random.default_rng(5), zero=True)
    data = [(np.full(4, 1e3), np.zeros(4))]
    with pytest.raises(NumericalError):
        train_adapter(block, data, 500, 10.0)


def test_parameters_are_read_only():
    block = _random_block(np.random.default_rng(6))
    with pytest.raises(ValueError):
        block.base_weight[0, 0] = 1.0


@pytest.mark.parametrize("d", [1, 3])
def test_block_file_round_trip(tmp_path, d):
    block = _random_block(np.random.default_rng(7), d)
    save_block(block, tmp_path / "b.txt")
    back = load_block(tmp_path / "b.txt")
    for name in ("base_weight", "base_bias", "adapter_weight", "adapter_bias"):
        assert np.array_equal(getattr(back, name), getattr(block, name))
    assert (tmp_path / "b.txt").read_text().startswith(f"adapter-block {d}\nbase_weight\n")

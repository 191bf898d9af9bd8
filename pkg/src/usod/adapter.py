"""Adapter-tuning on a frozen affine feature transform.

The output is ``base(f) + adapter(f)`` where both are ``W @ f + b`` with the
same shape. Only the adapter is ever trained; it starts at zero so the
tuned block initially reproduces the frozen base exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .core import NumericalError

__all__ = [
    "AdapterBlock",
    "AdapterGrads",
    "NumericalError",
    "backward",
    "forward",
    "load_block",
    "save_block",
    "train_adapter",
]

logger = logging.getLogger(__name__)

_SECTIONS = ("base_weight", "base_bias", "adapter_weight", "adapter_bias")


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AdapterBlock:
    base_weight: np.ndarray
    base_bias: np.ndarray
    adapter_weight: np.ndarray
    adapter_bias: np.ndarray

    def __post_init__(self):
        arrays = [_readonly(getattr(self, k)) for k in _SECTIONS]
        bw, bb, aw, ab = arrays
        d = bw.shape[0]
        if bw.shape != (d, d) or aw.shape != (d, d) or bb.shape != (d,) or ab.shape != (d,):
            raise ValueError(
                f"inconsistent block shapes: base {bw.shape}/{bb.shape}, adapter {aw.shape}/{ab.shape}"
            )
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("block parameters must be finite")
        for name, arr in zip(_SECTIONS, arrays):
            object.__setattr__(self, name, arr)

    @classmethod
    def with_zero_adapter(cls, base_weight, base_bias) -> AdapterBlock:
        bw = np.asarray(base_weight, dtype=np.float64)
        return cls(bw, base_bias, np.zeros_like(bw), np.zeros(bw.shape[0]))

    @property
    def dim(self) -> int:
        return self.base_weight.shape[0]

    def base(self, f) -> np.ndarray:
        return self.base_weight @ np.asarray(f, dtype=np.float64) + self.base_bias

    def zero_adapter(self) -> AdapterBlock:
        return replace(
            self,
            adapter_weight=np.zeros_like(self.adapter_weight),
            adapter_bias=np.zeros_like(self.adapter_bias),
        )


@dataclass(frozen=True)
class AdapterGrads:
    base_weight: np.ndarray
    base_bias: np.ndarray
    adapter_weight: np.ndarray
    adapter_bias: np.ndarray


def _vector(f, dim: int) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (dim,):
        raise ValueError(f"expected a feature vector of length {dim}, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("feature vector must be finite")
    return f


def forward(block: AdapterBlock, f) -> np.ndarray:
    f = _vector(f, block.dim)
    # zero adapter adds exact zeros, so the frozen output is reproduced bit for bit
    return (block.base_weight @ f + block.base_bias) + (block.adapter_weight @ f + block.adapter_bias)


def backward(block: AdapterBlock, f, upstream_grad) -> AdapterGrads:
    """Parameter gradients given ``dL/d output``; base gradients are always zero."""
    f = _vector(f, block.dim)
    g = _vector(upstream_grad, block.dim)
    return AdapterGrads(
        base_weight=np.zeros_like(block.base_weight),
        base_bias=np.zeros_like(block.base_bias),
        adapter_weight=np.outer(g, f),
        adapter_bias=g.copy(),
    )


def _mse(block: AdapterBlock, feats: np.ndarray, targets: np.ndarray):
    outputs = np.stack([forward(block, f) for f in feats])
    resid = outputs - targets
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow surfaces as a non-finite loss, reported by the caller
        return float(np.mean(resid * resid)), resid


def train_adapter(block: AdapterBlock, dataset, steps: int, lr: float):
    """Plain gradient descent on mean squared error, adapter parameters only.

    Returns the trained block and the loss before each step followed by the
    final loss (``steps + 1`` entries).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not lr > 0:
        raise ValueError("learning rate must be > 0")
    feats = np.array([np.asarray(f, dtype=np.float64) for f, _ in dataset])
    targets = np.array([np.asarray(t, dtype=np.float64) for _, t in dataset])
    if feats.ndim != 2 or feats.shape != targets.shape or feats.shape[1] != block.dim:
        raise ValueError("dataset must hold (feature, target) pairs of the block dimension")

    n, d = feats.shape
    trace = []
    for step in range(steps + 1):
        loss, resid = _mse(block, feats, targets)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite adapter loss at step {step}: {loss}")
        trace.append(loss)
        if step == steps:
            break
        upstream = 2.0 * resid / (n * d)
        gw = np.zeros_like(block.adapter_weight)
        gb = np.zeros_like(block.adapter_bias)
        for f, g in zip(feats, upstream):
            grads = backward(block, f, g)
            gw += grads.adapter_weight
            gb += grads.adapter_bias
        block = replace(
            block,
            adapter_weight=block.adapter_weight - lr * gw,
            adapter_bias=block.adapter_bias - lr * gb,
        )
    logger.debug("adapter training: loss %.3e -> %.3e over %d steps", trace[0], trace[-1], steps)
    return block, trace


def save_block(block: AdapterBlock, path) -> None:
    """Plain-text, row-major decimal dump: one header line per parameter group."""
    lines = [f"adapter-block {block.dim}"]
    for name in _SECTIONS:
        arr = np.atleast_2d(getattr(block, name))
        lines.append(name)
        lines.extend(" ".join(repr(float(v)) for v in row) for row in arr)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_block(path) -> AdapterBlock:
    with open(path, encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = lines[0].split()
    if len(head) != 2 or head[0] != "adapter-block":
        raise ValueError(f"{path}: not an adapter block file")
    d = int(head[1])
    parts = {}
    i = 1
    for name in _SECTIONS:
        if lines[i] != name:
            raise ValueError(f"{path}: expected section {name!r}, got {lines[i]!r}")
        rows = d if name.endswith("weight") else 1
        values = [[float(v) for v in ln.split()] for ln in lines[i + 1 : i + 1 + rows]]
        parts[name] = np.array(values) if name.endswith("weight") else np.array(values[0])
        i += 1 + rows
    return AdapterBlock(**parts)

"""Domain types, Netpbm I/O and pixel coordinates shared by every module.

Layout is row-major throughout: pixel ``i`` sits at ``(r, c)`` with
``i = r * width + c``. Maps are ``(height, width)`` float64 arrays, images
are ``(height, width, channels)``. Values are kept in double precision and
only quantized when written to disk.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BinaryMask",
    "Gradient",
    "Image",
    "NetpbmError",
    "NumericalError",
    "SaliencyMap",
    "as_image_array",
    "as_map_array",
    "load_image",
    "load_map",
    "load_map_raw",
    "position_grid",
    "save_image",
    "save_map",
    "save_map_raw",
]

# Per-pixel derivative of a scalar loss; same (height, width) shape as the map.
Gradient = np.ndarray


class NumericalError(ArithmeticError):
    """A loss or gradient became non-finite during optimization."""


class NetpbmError(ValueError):
    """Malformed or unsupported Netpbm data, located by byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _check_unit_range(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ValueError(
            f"{what} values must lie in [0, 1], got [{values.min()!r}, {values.max()!r}]"
        )


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Dense per-pixel saliency field with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"saliency map must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("saliency map needs width >= 1 and height >= 1")
        _check_unit_range(values, "saliency map")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> SaliencyMap:
        flat = np.asarray(values, dtype=np.float64).ravel()
        if flat.size != width * height:
            raise ValueError(
                f"expected {width * height} values for {width}x{height}, got {flat.size}"
            )
        return cls(flat.reshape(height, width))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True, eq=False)
class Image:
    """Interleaved multi-channel image with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"image must be (height, width, channels), got {values.shape}")
        _check_unit_range(values, "image")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def from_flat(cls, width: int, height: int, channels: int, values) -> Image:
        flat = np.asarray(values, dtype=np.float64).ravel()
        if flat.size != width * height * channels:
            raise ValueError(
                f"expected {width * height * channels} values, got {flat.size}"
            )
        return cls(flat.reshape(height, width, channels))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major boolean field (hard-sample mask, boundary mask)."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {bits.shape}")
        if bits.dtype != np.bool_:
            if not np.all((bits == 0) | (bits == 1)):
                raise ValueError("mask entries must be 0 or 1")
            bits = bits.astype(bool)
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def __array__(self, dtype=None, copy=None):
        return self.bits if dtype is None else self.bits.astype(dtype)


def as_map_array(s) -> np.ndarray:
    """Validated ``(height, width)`` float64 view of a map-like argument."""
    if isinstance(s, SaliencyMap):
        return s.values
    arr = np.asarray(s, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {arr.shape}")
    _check_unit_range(arr, "saliency map")
    return arr


def as_image_array(img) -> np.ndarray:
    if isinstance(img, Image):
        return img.values
    return Image(img).values


def _check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape[:2] for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def position_grid(width: int, height: int) -> np.ndarray:
    """Return ``(height * width, 2)`` row-major ``(row, col)`` coordinates."""
    if width < 1 or height < 1:
        raise ValueError("width and height must be >= 1")
    rows, cols = np.divmod(np.arange(width * height), width)
    return np.stack([rows, cols], axis=1).astype(np.float64)


# --- Netpbm ------------------------------------------------------------------

_WHITESPACE = b" \t\n\r\x0b\x0c"
_CHANNELS = {b"P2": 1, b"P5": 1, b"P3": 3, b"P6": 3}


class _Tokens:
    """Netpbm tokenizer: whitespace-separated, ``#`` comments to end of line."""

    def __init__(self, data: bytes, pos: int):
        self.data = data
        self.pos = pos
        self.start = pos  # offset of the most recent token

    def _skip(self) -> None:
        data = self.data
        n = len(data)
        while self.pos < n:
            ch = data[self.pos : self.pos + 1]
            if ch in _WHITESPACE:
                self.pos += 1
            elif ch == b"#":
                while self.pos < n and data[self.pos : self.pos + 1] not in b"\r\n":
                    self.pos += 1
            else:
                return

    def integer(self, what: str) -> int:
        self._skip()
        start = self.start = self.pos
        data = self.data
        while self.pos < len(data) and data[self.pos : self.pos + 1].isdigit():
            self.pos += 1
        if start == self.pos:
            if start >= len(data):
                raise NetpbmError(f"truncated data: missing {what}", start)
            raise NetpbmError(f"expected decimal {what}", start)
        end = data[self.pos : self.pos + 1]
        if end and end not in _WHITESPACE and end != b"#":
            raise NetpbmError(f"malformed {what}", self.pos)
        return int(data[start : self.pos])


def _decode(data: bytes) -> tuple[np.ndarray, int]:
    magic = data[:2]
    if len(data) < 2 or magic not in _CHANNELS:
        raise NetpbmError(f"unsupported magic number {magic!r}", 0)
    channels = _CHANNELS[magic]
    tok = _Tokens(data, 2)
    width = tok.integer("width")
    height = tok.integer("height")
    maxval = tok.integer("maxval")
    maxval_at = tok.start
    if width < 1 or height < 1:
        raise NetpbmError("width and height must be positive", maxval_at)
    if not 1 <= maxval <= 65535:
        raise NetpbmError(f"maxval {maxval} outside 1..65535", maxval_at)
    count = width * height * channels

    if magic in (b"P5", b"P6"):
        if tok.pos >= len(data) or data[tok.pos : tok.pos + 1] not in _WHITESPACE:
            raise NetpbmError("missing whitespace before raster", tok.pos)
        start = tok.pos + 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(data) - start < need:
            raise NetpbmError(
                f"truncated raster: need {need} bytes, have {len(data) - start}", len(data)
            )
        samples = np.frombuffer(data, dtype=dtype, count=count, offset=start).astype(np.int64)
        bad = np.flatnonzero(samples > maxval)
        if bad.size:
            raise NetpbmError(
                f"sample {samples[bad[0]]} exceeds maxval {maxval}",
                start + int(bad[0]) * dtype.itemsize,
            )
    else:
        samples = np.empty(count, dtype=np.int64)
        for k in range(count):
            value = tok.integer("sample")
            if value > maxval:
                raise NetpbmError(f"sample {value} exceeds maxval {maxval}", tok.start)
            samples[k] = value

    return samples.reshape(height, width, channels), maxval


def load_image(path) -> Image:
    """Read a PGM (P2/P5) or PPM (P3/P6) file, scaling samples by ``1/maxval``."""
    with open(path, "rb") as fh:
        data = fh.read()
    samples, maxval = _decode(data)
    return Image(samples / float(maxval))


def _quantize(values: np.ndarray, maxval: int) -> np.ndarray:
    # round half up, so 0.5 * 255 -> 128
    return np.floor(values * maxval + 0.5).astype(np.int64)


def _write_binary(path, magic: bytes, samples: np.ndarray, maxval: int) -> None:
    height, width = samples.shape[:2]
    dtype = ">u2" if maxval > 255 else "u1"
    header = b"%s\n%d %d\n%d\n" % (magic, width, height, maxval)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(samples, dtype=dtype).tobytes())


def save_image(img, path, maxval: int = 255) -> None:
    """Write a 1-channel image as P5 or a 3-channel image as P6."""
    values = as_image_array(img)
    if not 1 <= maxval <= 65535:
        raise ValueError("maxval must be in 1..65535")
    magic = {1: b"P5", 3: b"P6"}.get(values.shape[2])
    if magic is None:
        raise ValueError(f"cannot write {values.shape[2]}-channel image as PGM/PPM")
    _write_binary(path, magic, _quantize(values, maxval), maxval)


def save_map(saliency, path) -> None:
    """Write a saliency map as an 8-bit P5 PGM."""
    _write_binary(path, b"P5", _quantize(as_map_array(saliency), 255), 255)


def load_map(path) -> SaliencyMap:
    img = load_image(path)
    if img.channels != 1:
        raise NetpbmError("expected a single-channel PGM for a saliency map", 0)
    return SaliencyMap(img.values[:, :, 0])


_RAW_MAGIC = "USODMAP"


def save_map_raw(saliency, path) -> None:
    """Lossless plain-text map: shortest round-trip decimal per value."""
    values = as_map_array(saliency)
    height, width = values.shape
    lines = [f"{_RAW_MAGIC} {width} {height}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in values)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_map_raw(path) -> SaliencyMap:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != _RAW_MAGIC:
            raise ValueError(f"{os.fspath(path)}: not a raw saliency map")
        width, height = int(header[1]), int(header[2])
        values = [float(tok) for tok in fh.read().split()]
    return SaliencyMap.from_flat(width, height, values)

"""Dense tensor operations: 2-D convolution, max-pooling and PCT1 file I/O.

Tensors are plain float64 numpy arrays.  Spatial operations accept a single
feature map ``[C, H, W]`` or a batch ``[B, C, H, W]`` and return the same rank
they were given.  Convolution is cross-correlation (no kernel flip).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DataError, DimensionError

PCT_MAGIC = b"PCT1"

PathLike = Union[str, Path]


@dataclass
class ConvKernel:
    """Convolution weights laid out as ``[C_in, D_out, h, w]``."""

    weights: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 4 or min(self.weights.shape) < 1:
            raise DimensionError(f"kernel must be [C, D, h, w], got {self.weights.shape}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        h, w = self.weights.shape[2:]
        if self.padding < 0 or self.padding >= h or self.padding >= w:
            raise ConfigurationError(
                f"padding {self.padding} must satisfy 0 <= padding < kernel size ({h}x{w})")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[1]

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        h, w = self.weights.shape[2:]
        sizes = []
        for n, k in ((height, h), (width, w)):
            span = n + 2 * self.padding - k
            if span < 0 or span % self.stride:
                raise ConfigurationError(
                    f"input size {n} with kernel {k}, stride {self.stride}, "
                    f"padding {self.padding} gives a non-integer output size")
            sizes.append(span // self.stride + 1)
        return sizes[0], sizes[1]


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected [C, H, W] or [B, C, H, W], got shape {x.shape}")


def im2col(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Patch view of a batch: ``[B, C, H', W', h, w]`` (a strided view, not a copy)."""
    h, w = kernel.weights.shape[2:]
    p, s = kernel.padding, kernel.stride
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = sliding_window_view(x, (h, w), axis=(2, 3))
    return cols[:, :, ::s, ::s]


def col2im(grad_cols: np.ndarray, kernel: ConvKernel, height: int, width: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to the input grid."""
    B, C, Ho, Wo, h, w = grad_cols.shape
    p, s = kernel.padding, kernel.stride
    out = np.zeros((B, C, height + 2 * p, width + 2 * p))
    for i in range(h):
        for j in range(w):
            out[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += grad_cols[..., i, j]
    if p:
        out = out[:, :, p:-p, p:-p]
    return out


def _check_conv_input(x: np.ndarray, kernel: ConvKernel) -> tuple[int, int]:
    if x.shape[1] != kernel.in_channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels, kernel expects {kernel.in_channels}")
    return kernel.output_size(x.shape[2], x.shape[3])


def conv2d(x: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Multi-channel 2-D cross-correlation, ``U_d = sum_c W[c, d] * T_c``."""
    xb, single = _as_batch(x)
    _check_conv_input(xb, kernel)
    cols = im2col(xb, kernel)
    out = np.tensordot(cols, kernel.weights, axes=([1, 4, 5], [0, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    return out[0] if single else np.ascontiguousarray(out)


def conv2d_backward(x: np.ndarray, kernel: ConvKernel, grad_out: np.ndarray):
    """Gradients of a scalar loss w.r.t. the conv input and weights.

    Returns ``(grad_input, grad_weights)`` with the shapes of ``x`` and
    ``kernel.weights``.
    """
    xb, single = _as_batch(x)
    gb = np.asarray(grad_out, dtype=np.float64)
    if single:
        gb = gb[None]
    Ho, Wo = _check_conv_input(xb, kernel)
    expected = (xb.shape[0], kernel.out_channels, Ho, Wo)
    if gb.shape != expected:
        raise DimensionError(f"grad_out shape {gb.shape[single:]} != output shape {expected[single:]}")
    cols = im2col(xb, kernel)
    # [C, h, w, D] -> [C, D, h, w]
    grad_w = np.tensordot(cols, gb, axes=([0, 2, 3], [0, 2, 3])).transpose(0, 3, 1, 2)
    # [B, D, Ho, Wo] x [C, D, h, w] -> [B, Ho, Wo, C, h, w]
    grad_cols = np.tensordot(gb, kernel.weights, axes=([1], [1])).transpose(0, 3, 1, 2, 4, 5)
    grad_x = col2im(grad_cols, kernel, xb.shape[2], xb.shape[3])
    return (grad_x[0] if single else grad_x), np.ascontiguousarray(grad_w)


def maxpool2d(x: np.ndarray):
    """2x2 max-pooling with stride 2.

    Returns ``(out, index)`` where ``index`` holds, per output cell, the
    row-major position (0..3) of the selected element inside its window.
    Ties go to the first maximal element.
    """
    xb, single = _as_batch(x)
    B, C, H, W = xb.shape
    if H % 2 or W % 2:
        raise DimensionError(f"max-pool needs even spatial dims, got {H}x{W}")
    windows = xb.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(B, C, H // 2, W // 2, 4)
    index = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]
    if single:
        return out[0], index[0]
    return out, index


def maxpool2d_backward(grad_out: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Route output gradients to the arg-max positions recorded by :func:`maxpool2d`."""
    gb, single = _as_batch(grad_out)
    ib = index[None] if single else index
    if ib.shape != gb.shape:
        raise DimensionError(f"index shape {ib.shape} != grad shape {gb.shape}")
    B, C, Ho, Wo = gb.shape
    windows = np.zeros((B, C, Ho, Wo, 4))
    np.put_along_axis(windows, ib[..., None], gb[..., None], axis=-1)
    grad = windows.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    grad = grad.reshape(B, C, 2 * Ho, 2 * Wo)
    return grad[0] if single else grad


# --------------------------------------------------------------------------
# PCT1 binary tensor files
# --------------------------------------------------------------------------

def write_tensor(dest: Union[PathLike, BinaryIO], array: np.ndarray) -> None:
    """Write ``array`` as a PCT1 record (float32 little-endian payload)."""
    array = np.asarray(array)
    header = PCT_MAGIC + struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape)
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as fh:
            fh.write(header + payload)
    else:
        dest.write(header + payload)


def read_tensor(src: Union[PathLike, BinaryIO]) -> np.ndarray:
    """Read one PCT1 record; the result is promoted to float64."""
    if isinstance(src, (str, Path)):
        with open(src, "rb") as fh:
            return read_tensor(fh)
    magic = src.read(4)
    if magic != PCT_MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {PCT_MAGIC!r}")
    (rank,) = struct.unpack("<I", src.read(4))
    shape = struct.unpack(f"<{rank}I", src.read(4 * rank))
    count = int(np.prod(shape, dtype=np.int64))
    raw = src.read(4 * count)
    if len(raw) != 4 * count:
        raise DataError(f"truncated PCT1 payload: wanted {4 * count} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

"""Dense float32 kernels for the forward pass.

Spatial tensors are numpy arrays laid out ``(channels, rows, cols)``. Index
names follow the convention used across the package: ``x`` is the row index
and ``y`` the column index. Dot products accumulate in float64 and are stored
back as float32.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor dimensions do not line up."""


@dataclass(frozen=True)
class ConvParams:
    kernel: int
    stride: int = 1
    pad: int = 0
    out_channels: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.pad < 0 or self.out_channels < 1:
            raise ShapeError(f"invalid conv params {self}")

    def out_size(self, n: int) -> int:
        size = (n + 2 * self.pad - self.kernel) // self.stride + 1
        if size < 1:
            raise ShapeError(
                f"kernel {self.kernel} with pad {self.pad} does not fit input size {n}")
        return size


@dataclass(frozen=True)
class ChannelRange:
    start: int
    end: int


def conv2d_forward(input, weights, bias, params: ConvParams) -> np.ndarray:
    """Cross-correlate a ``(C, H, W)`` input with ``(K, C, k, k)`` weights."""
    x = np.asarray(input, dtype=DTYPE)
    w = np.asarray(weights, dtype=DTYPE)
    b = np.asarray(bias, dtype=DTYPE)
    if x.ndim != 3:
        raise ShapeError(f"conv input must be (C, H, W), got shape {x.shape}")
    k = params.kernel
    expected = (params.out_channels, x.shape[0], k, k)
    if w.shape != expected:
        raise ShapeError(f"conv weights have shape {w.shape}, expected {expected}")
    if b.shape != (params.out_channels,):
        raise ShapeError(f"conv bias has shape {b.shape}, expected ({params.out_channels},)")
    oh, ow = params.out_size(x.shape[1]), params.out_size(x.shape[2])
    p, s = params.pad, params.stride
    padded = np.pad(x.astype(np.float64), ((0, 0), (p, p), (p, p)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))
    windows = windows[:, : (oh - 1) * s + 1 : s, : (ow - 1) * s + 1 : s]
    out = np.einsum("chwuv,kcuv->khw", windows, w.astype(np.float64))
    out += b.astype(np.float64)[:, None, None]
    return out.astype(DTYPE)


def maxpool_forward(input, kernel: int, stride: int) -> np.ndarray:
    x = np.asarray(input, dtype=DTYPE)
    if x.ndim != 3:
        raise ShapeError(f"pool input must be (C, H, W), got shape {x.shape}")
    if kernel < 1 or stride < 1:
        raise ShapeError(f"invalid pooling kernel={kernel} stride={stride}")
    if kernel > x.shape[1] or kernel > x.shape[2]:
        raise ShapeError(f"pool window {kernel} exceeds input {x.shape[1:]}")
    windows = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    return windows.max(axis=(3, 4)).astype(DTYPE)


def fc_forward(input, weights, bias) -> np.ndarray:
    x = np.asarray(input, dtype=DTYPE)
    w = np.asarray(weights, dtype=DTYPE)
    b = np.asarray(bias, dtype=DTYPE)
    if x.ndim != 1:
        raise ShapeError(f"fc input must be a vector, got shape {x.shape}")
    if w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"fc weights {w.shape} do not match input length {x.shape[0]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"fc bias {b.shape} does not match {w.shape[0]} outputs")
    out = w.astype(np.float64) @ x.astype(np.float64) + b
    return out.astype(DTYPE)


def relu(input) -> np.ndarray:
    return np.maximum(np.asarray(input, dtype=DTYPE), DTYPE(0))


def sigmoid(input) -> np.ndarray:
    x = np.asarray(input, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.astype(DTYPE)


def tanh_act(input) -> np.ndarray:
    return np.tanh(np.asarray(input, dtype=np.float64)).astype(DTYPE)


def softmax(input) -> np.ndarray:
    x = np.asarray(input, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {x.shape}")
    e = np.exp(x - x.max())
    return (e / e.sum()).astype(DTYPE)


def concat_channels(inputs) -> tuple[np.ndarray, tuple[ChannelRange, ...]]:
    """Stack spatial maps along channels; also return each input's channel range."""
    arrays = [np.asarray(a, dtype=DTYPE) for a in inputs]
    if not arrays:
        raise ShapeError("concat needs at least one input")
    spatial = arrays[0].shape[1:]
    ranges = []
    start = 0
    for a in arrays:
        if a.ndim != 3 or a.shape[1:] != spatial:
            raise ShapeError(f"concat spatial mismatch: {a.shape} vs (*, {spatial[0]}, {spatial[1]})")
        ranges.append(ChannelRange(start, start + a.shape[0]))
        start += a.shape[0]
    return np.concatenate(arrays, axis=0), tuple(ranges)


def elementwise_add(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def receptive_patch(input, out_x: int, out_y: int, params: ConvParams):
    """Return the zero-padded ``(C, k, k)`` window feeding output ``(out_x, out_y)``.

    The second value is a ``(k, k)`` boolean mask, false where the window
    covers padding.
    """
    x = np.asarray(input, dtype=DTYPE)
    oh, ow = params.out_size(x.shape[1]), params.out_size(x.shape[2])
    if not (0 <= out_x < oh and 0 <= out_y < ow):
        raise IndexError(f"output coordinate ({out_x}, {out_y}) outside {oh}x{ow} grid")
    k = params.kernel
    rows = out_x * params.stride - params.pad + np.arange(k)
    cols = out_y * params.stride - params.pad + np.arange(k)
    rvalid = (rows >= 0) & (rows < x.shape[1])
    cvalid = (cols >= 0) & (cols < x.shape[2])
    mask = rvalid[:, None] & cvalid[None, :]
    patch = np.zeros((x.shape[0], k, k), dtype=DTYPE)
    rr = np.clip(rows, 0, x.shape[1] - 1)
    cc = np.clip(cols, 0, x.shape[2] - 1)
    patch[:] = x[:, rr[:, None], cc[None, :]]
    patch[:, ~mask] = 0
    return patch, mask

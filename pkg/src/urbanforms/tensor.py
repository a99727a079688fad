"""Dense float32 tensors and the differentiable ops the autoencoder needs.

Layout convention is NHWC: [batch, height, width, channels]. All ops are
pure functions over numpy arrays; accumulation happens in float64 and
results are cast back to float32. Summation order is fixed (kernel-position
major) so repeated runs are bit-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

TENSOR_MAGIC = b"MSTN"
TENSOR_VERSION = 1


class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with an operation."""


def make_tensor(values, shape: Sequence[int] | None = None, checked: bool = False) -> np.ndarray:
    """Build a contiguous float32 tensor, optionally rejecting non-finite values."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if shape is not None:
        expected = int(np.prod(shape))
        if arr.size != expected:
            raise ShapeError(f"cannot shape {arr.size} values into {tuple(shape)}")
        arr = arr.reshape(shape)
    if checked and not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


@dataclass
class ConvKernel:
    """Convolution parameters: weights [kh, kw, in_ch, out_ch] plus bias [out_ch]."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
        if self.weights.ndim != 4:
            raise ShapeError(f"kernel weights must be 4-d, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[3],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match out_ch {self.weights.shape[3]}"
            )

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[3]


def same_pad_amounts(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """'Same' padding split for one axis; the extra pixel goes after (bottom/right)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    before = total // 2
    return before, total - before


def conv_output_size(size: int, stride: int) -> int:
    return -(-size // stride)


def _check_input(x: np.ndarray, kernel: ConvKernel) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected NHWC input, got shape {x.shape}")
    if x.shape[3] != kernel.in_channels:
        raise ShapeError(
            f"input channels {x.shape} do not match kernel {kernel.weights.shape}"
        )


def _pad_same(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    top, bottom = same_pad_amounts(x.shape[1], kh, stride)
    left, right = same_pad_amounts(x.shape[2], kw, stride)
    return np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))


def conv2d_forward(x: np.ndarray, kernel: ConvKernel, stride: int) -> np.ndarray:
    """Strided cross-correlation with 'same' padding plus bias.

    Output spatial dims are ceil(in / stride) on both axes.
    """
    _check_input(x, kernel)
    kh, kw = kernel.weights.shape[:2]
    b, h, w = x.shape[:3]
    oh, ow = conv_output_size(h, stride), conv_output_size(w, stride)
    xp = _pad_same(x, kh, kw, stride).astype(np.float64)
    w64 = kernel.weights.astype(np.float64)
    acc = np.zeros((b, oh, ow, kernel.out_channels), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            acc += xp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] @ w64[i, j]
    acc += kernel.bias.astype(np.float64)
    return acc.astype(np.float32)


def conv2d_transpose_forward(
    y: np.ndarray,
    kernel: ConvKernel,
    stride: int,
    out_spatial: tuple[int, int],
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Exact adjoint of conv2d_forward's linear map, plus an optional output bias.

    Maps [B, h, w, out_ch] back to [B, H, W, in_ch] where (H, W) = out_spatial
    and ceil(H/stride) == h, ceil(W/stride) == w. With zero biases this
    satisfies dot(conv2d_forward(x), y) == dot(x, conv2d_transpose_forward(y)).
    """
    if y.ndim != 4:
        raise ShapeError(f"expected NHWC input, got shape {y.shape}")
    if y.shape[3] != kernel.out_channels:
        raise ShapeError(
            f"input channels {y.shape} do not match kernel {kernel.weights.shape}"
        )
    hh, ww = out_spatial
    if conv_output_size(hh, stride) != y.shape[1] or conv_output_size(ww, stride) != y.shape[2]:
        raise ShapeError(
            f"out_spatial {out_spatial} with stride {stride} is inconsistent with input {y.shape}"
        )
    out = _conv_adjoint(y, kernel.weights, stride, (hh, ww))
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)
    return out.astype(np.float32)


def _conv_adjoint(y: np.ndarray, weights: np.ndarray, stride: int, out_hw: tuple[int, int]) -> np.ndarray:
    """Scatter-add transpose of the padded strided correlation; returns float64."""
    kh, kw = weights.shape[:2]
    b, oh, ow = y.shape[:3]
    hh, ww = out_hw
    top, bottom = same_pad_amounts(hh, kh, stride)
    left, right = same_pad_amounts(ww, kw, stride)
    y64 = y.astype(np.float64)
    w64 = weights.astype(np.float64)
    gpad = np.zeros((b, top + hh + bottom, left + ww + right, weights.shape[2]), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            gpad[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += y64 @ w64[i, j].T
    return gpad[:, top : top + hh, left : left + ww, :]


def _conv_weight_grad(x: np.ndarray, upstream: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Gradient of sum(upstream * conv(x)) w.r.t. the kernel weights; float64."""
    b, oh, ow = upstream.shape[:3]
    xp = _pad_same(x, kh, kw, stride).astype(np.float64)
    up64 = upstream.astype(np.float64)
    grad = np.empty((kh, kw, x.shape[3], upstream.shape[3]), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
            grad[i, j] = np.einsum("bpqc,bpqd->cd", patch, up64)
    return grad


def conv2d_backward(
    x: np.ndarray, kernel: ConvKernel, stride: int, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(upstream * conv2d_forward(x)) w.r.t. input, weights, bias."""
    _check_input(x, kernel)
    kh, kw = kernel.weights.shape[:2]
    oh = conv_output_size(x.shape[1], stride)
    ow = conv_output_size(x.shape[2], stride)
    if upstream.shape != (x.shape[0], oh, ow, kernel.out_channels):
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match conv output "
            f"{(x.shape[0], oh, ow, kernel.out_channels)}"
        )
    grad_input = _conv_adjoint(upstream, kernel.weights, stride, (x.shape[1], x.shape[2]))
    grad_weights = _conv_weight_grad(x, upstream, kh, kw, stride)
    grad_bias = upstream.astype(np.float64).sum(axis=(0, 1, 2))
    return (
        grad_input.astype(np.float32),
        grad_weights.astype(np.float32),
        grad_bias.astype(np.float32),
    )


def conv2d_transpose_backward(
    y: np.ndarray,
    kernel: ConvKernel,
    stride: int,
    out_spatial: tuple[int, int],
    upstream: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of sum(upstream * conv2d_transpose_forward(y)) w.r.t. y, weights, bias."""
    hh, ww = out_spatial
    if upstream.shape != (y.shape[0], hh, ww, kernel.in_channels):
        raise ShapeError(
            f"upstream shape {upstream.shape} does not match transpose output "
            f"{(y.shape[0], hh, ww, kernel.in_channels)}"
        )
    kh, kw = kernel.weights.shape[:2]
    grad_y = np.zeros((y.shape[0], y.shape[1], y.shape[2], kernel.out_channels), dtype=np.float64)
    up_pad = _pad_same(upstream, kh, kw, stride).astype(np.float64)
    w64 = kernel.weights.astype(np.float64)
    oh, ow = y.shape[1], y.shape[2]
    for i in range(kh):
        for j in range(kw):
            grad_y += up_pad[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] @ w64[i, j]
    grad_weights = _conv_weight_grad(upstream, y, kh, kw, stride)
    grad_bias = upstream.astype(np.float64).sum(axis=(0, 1, 2))
    return (
        grad_y.astype(np.float32),
        grad_weights.astype(np.float32),
        grad_bias.astype(np.float32),
    )


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Passes upstream where x > 0; subgradient 0 at exactly 0."""
    if x.shape != upstream.shape:
        raise ShapeError(f"shapes {x.shape} and {upstream.shape} differ")
    return np.where(x > 0, upstream, np.float32(0.0)).astype(np.float32)


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient w.r.t. the prediction."""
    if prediction.shape != target.shape:
        raise ShapeError(f"shapes {prediction.shape} and {target.shape} differ")
    diff = prediction.astype(np.float64) - target.astype(np.float64)
    n = diff.size
    loss = float(np.dot(diff.ravel(), diff.ravel()) / n)
    grad = (2.0 * diff / n).astype(np.float32)
    return loss, grad


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    """Serialize one float32 tensor: magic, version u16, rank u8, dims u32s, payload."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<H", TENSOR_VERSION))
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.astype("<f4").tobytes(order="C"))


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    (version,) = struct.unpack("<H", fh.read(2))
    if version != TENSOR_VERSION:
        raise ValueError(f"unsupported tensor version {version}")
    (rank,) = struct.unpack("<B", fh.read(1))
    dims = struct.unpack("<" + "I" * rank, fh.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()

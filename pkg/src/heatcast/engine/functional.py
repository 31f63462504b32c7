"""Differentiable layer primitives used by the forecasting models.

Spatial ops take ``[C, H, W]`` or batched ``[N, C, H, W]`` inputs; a missing batch
axis is added on entry and removed on exit.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, Tensor

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected a [C,H,W] or [N,C,H,W] tensor, got shape {x.shape}")
    return x, False


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``kernels`` is ``[C_out, C_in, k, k]``; output extents are
    ``floor((H + 2*padding - k) / stride) + 1``.
    """
    xb, squeeze = _batched(x)
    n, c_in, h, w = xb.shape
    c_out, k_in, kh, kw = kernels.shape
    if k_in != c_in:
        raise ValueError(f"conv2d: input has {c_in} channels but kernels expect {k_in}")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError("conv2d: kernel larger than padded input")

    xp = np.pad(xb.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xb.data
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    # [N, Ho, Wo, C, kh, kw] -> rows of receptive fields
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h_out * w_out, c_in * kh * kw)
    wmat = kernels.data.reshape(c_out, -1)
    out = (cols @ wmat.T).reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)
    out = np.ascontiguousarray(out)
    xp_shape = xp.shape

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (g2.T @ cols).reshape(kernels.shape) if kernels.requires_grad else None
        gx = None
        if xb.requires_grad:
            dcols = (g2 @ wmat).reshape(n, h_out, w_out, c_in, kh, kw)
            dxp = np.zeros(xp_shape, dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (xb, kernels) if bias is None else (xb, kernels, bias)
    result = Tensor.from_op(out, parents, backward, "conv2d")
    return result.reshape(result.shape[1:]) if squeeze else result


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2.

    The gradient goes to the first maximal cell of each window in row-major order.
    """
    xb, squeeze = _batched(x)
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2d needs even extents, got {h}x{w}")
    blocks = xb.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=DTYPE)
        np.put_along_axis(routed, idx[..., None], g[..., None], axis=-1)
        return (routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    result = Tensor.from_op(out, (xb,), backward, "max_pool2d")
    return result.reshape(result.shape[1:]) if squeeze else result


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling by a factor of two in both spatial axes."""
    xb, squeeze = _batched(x)
    n, c, h, w = xb.shape
    out = xb.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    result = Tensor.from_op(out, (xb,), backward, "upsample2x")
    return result.reshape(result.shape[1:]) if squeeze else result


def selu(x: Tensor) -> Tensor:
    d = x.data
    neg = SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(d, 0.0))
    out = np.where(d > 0, SELU_LAMBDA * d, neg - SELU_LAMBDA * SELU_ALPHA)
    slope = np.where(d > 0, SELU_LAMBDA, neg)
    return Tensor.from_op(out, (x,), lambda g: (g * slope,), "selu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def softmax(scores: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtracted before exponentiation)."""
    shifted = scores.data - scores.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (scores,), backward, "softmax")


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean: ``[.., C, H, W] -> [.., C]``."""
    return x.mean(axis=(-2, -1))


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``weights @ x + bias`` for ``x`` of shape ``[m]`` or ``[N, m]``."""
    if x.shape[-1] != weights.shape[1]:
        raise ValueError(f"dense: input width {x.shape[-1]} does not match weights {weights.shape}")
    xd, wd = x.data, weights.data
    out = xd @ wd.T + bias.data

    def backward(g):
        if xd.ndim == 1:
            gw = np.outer(g, xd)
        else:
            gw = g.T @ xd
        gb = g if g.ndim == 1 else g.sum(axis=0)
        return g @ wd, gw, gb

    return Tensor.from_op(out, (x, weights, bias), backward, "dense")

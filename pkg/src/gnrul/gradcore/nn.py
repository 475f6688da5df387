"""Differentiable layers built on the tensor primitives: 1-D convolution,
pooling and dropout. Inputs are ``[C, L]`` or batched ``[B, C, L]``."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, as_tensor, make_result, mul, reduce


def _as_batched(x):
    if x.ndim == 2:
        return x.data[None], True
    if x.ndim == 3:
        return x.data, False
    raise DimensionError(f"expected [C, L] or [B, C, L], got shape {x.shape}")


def conv_output_length(length, kernel, stride, padding):
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(x, kernels, stride=1, padding=0, bias=None):
    """Cross-correlation of ``x`` with ``kernels`` of shape ``[C_out, C_in, k]``."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    xb, squeeze = _as_batched(x)
    batch, c_in, length = xb.shape
    c_out, c_in_w, k = kernels.shape
    if c_in != c_in_w:
        raise DimensionError(f"input has {c_in} channels, kernels expect {c_in_w}")
    out_len = conv_output_length(length, k, stride, padding)
    if out_len < 1:
        raise DimensionError(f"empty conv1d output for length {length}, kernel {k}, padding {padding}")
    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding))) if padding else xb
    windows = sliding_window_view(xp, k, axis=-1)[:, :, ::stride, :][:, :, :out_len, :]
    cols = windows.transpose(0, 2, 1, 3).reshape(batch, out_len, c_in * k)
    wmat = kernels.data.reshape(c_out, c_in * k)
    out = (cols @ wmat.T).transpose(0, 2, 1)
    parents = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None]
        parents.append(bias)
    out = np.ascontiguousarray(out[0] if squeeze else out)

    def bw(g):
        gb = g[None] if squeeze else g
        gt = gb.transpose(0, 2, 1)
        gw = (gt.reshape(-1, c_out).T @ cols.reshape(-1, c_in * k)).reshape(c_out, c_in, k)
        dx = None
        if x.requires_grad:
            dcols = (gt @ wmat).reshape(batch, out_len, c_in, k)
            dxp = np.zeros((batch, c_in, length + 2 * padding))
            span = stride * (out_len - 1) + 1
            for j in range(k):
                dxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            dx = dxp[:, :, padding:padding + length]
            dx = dx[0] if squeeze else dx
        grads = [dx, gw]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2)))
        return tuple(grads)

    return make_result(out, tuple(parents), bw, "conv1d")


def avg_pool1d(x, k, stride):
    """Mean over windows of length ``k`` along the last axis."""
    x = as_tensor(x)
    xb, squeeze = _as_batched(x)
    length = xb.shape[-1]
    if k > length:
        raise DimensionError(f"pool window {k} exceeds length {length}")
    out_len = (length - k) // stride + 1
    windows = sliding_window_view(xb, k, axis=-1)[:, :, ::stride, :][:, :, :out_len, :]
    out = windows.mean(axis=-1)
    out = np.ascontiguousarray(out[0] if squeeze else out)

    def bw(g):
        gb = g[None] if squeeze else g
        dx = np.zeros_like(xb)
        span = stride * (out_len - 1) + 1
        for j in range(k):
            dx[:, :, j:j + span:stride] += gb / k
        return (dx[0] if squeeze else dx,)

    return make_result(out, (x,), bw, "avg_pool1d")


def global_avg_pool(x):
    """Per-channel mean over the last (time) axis."""
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise DimensionError("global_avg_pool over an empty axis")
    return reduce("mean", x, axis=-1)


def dropout(x, rate, training, rng):
    """Inverted dropout; identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return mul(x, keep / (1.0 - rate))

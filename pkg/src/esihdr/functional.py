"""Network-level differentiable operations built on :mod:`esihdr.tensor`.

Spatial tensors are ``[B, C, H, W]``; rank-3 ``[C, H, W]`` inputs are
accepted by the convolution and pooling entry points and returned at the
same rank.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .tensor import Tensor, _make, as_tensor

LRELU_SLOPE = 0.2
SUPPORTED_KERNELS = (1, 3, 5, 7)


def _batched(x):
    if x.ndim == 3:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected [C,H,W] or [B,C,H,W], got shape {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return T.reshape(y, y.shape[1:]) if squeeze else y


def _pad(a, p):
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_standard(x, w, p):
    xd, wd = x.data, w.data
    cout, cin, k, _ = wd.shape
    B, _, H, W = xd.shape
    xp = _pad(xd, p)
    Ho, Wo = xp.shape[2] - k + 1, xp.shape[3] - k + 1
    if k == 1:
        out = np.einsum("oc,bchw->bohw", wd[:, :, 0, 0], xp, optimize=True)
    else:
        cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # B,Cin,Ho,Wo,k,k
        out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def bw(g):
        if k == 1:
            gw = np.einsum("bohw,bchw->oc", g, xp, optimize=True)[:, :, None, None]
            gxp = np.einsum("oc,bohw->bchw", wd[:, :, 0, 0], g, optimize=True)
        else:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
            gcols = np.tensordot(g, wd, axes=([1], [0]))  # B,Ho,Wo,Cin,k,k
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + Ho, j : j + Wo] += gcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        return gx, gw

    return out, bw


def _conv_depthwise(x, w, p):
    xd, wd = x.data, w.data
    C, _, k, _ = wd.shape
    xp = _pad(xd, p)
    Ho, Wo = xp.shape[2] - k + 1, xp.shape[3] - k + 1
    taps = wd[:, 0]  # C,k,k
    out = np.zeros((xd.shape[0], C, Ho, Wo))
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i : i + Ho, j : j + Wo] * taps[None, :, i, j, None, None]

    def bw(g):
        gxp = np.zeros(xp.shape)
        gw = np.zeros(wd.shape)
        for i in range(k):
            for j in range(k):
                win = xp[:, :, i : i + Ho, j : j + Wo]
                gw[:, 0, i, j] = (g * win).sum(axis=(0, 2, 3))
                gxp[:, :, i : i + Ho, j : j + Wo] += g * taps[None, :, i, j, None, None]
        H, W = xd.shape[2:]
        gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        return gx, gw

    return out, bw


def conv2d(x, weight, bias=None, depthwise=False, padding="same"):
    """Stride-1 2-D cross-correlation with zero padding.

    ``weight`` is ``[C_out, C_in, k, k]`` for a standard convolution or
    ``[C, 1, k, k]`` when ``depthwise`` is set. ``padding="same"`` pads by
    ``(k - 1) // 2`` so the spatial size is preserved.
    """
    x, squeeze = _batched(as_tensor(x))
    weight = as_tensor(weight)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"weight must be [C_out, C_in, k, k], got {weight.shape}")
    k = weight.shape[2]
    if padding == "same":
        if k % 2 == 0:
            raise ValueError(f"same padding needs an odd kernel, got k={k}")
        p = (k - 1) // 2
    else:
        p = int(padding)
    cin = x.shape[1]
    if depthwise:
        if weight.shape[1] != 1 or weight.shape[0] != cin:
            raise ValueError(
                f"depthwise weight {weight.shape} does not match input channel axis C={cin}"
            )
        out, bw = _conv_depthwise(x, weight, p)
    else:
        if weight.shape[1] != cin:
            raise ValueError(
                f"weight input-channel axis is {weight.shape[1]} but input channel axis C={cin}"
            )
        out, bw = _conv_standard(x, weight, p)
    y = _make(out, (x, weight), bw, "conv2d")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match output channel axis")
        y = y + T.reshape(bias, (1, -1, 1, 1))
    return _unbatch(y, squeeze)


def activate(x, mode):
    if mode == "relu":
        return T.relu(x)
    if mode == "lrelu":
        return T.leaky_relu(x, LRELU_SLOPE)
    if mode == "rrelu_paper":
        # rectified negative part: max(0, -x)
        return T.relu(T.neg(x))
    if mode == "sigmoid":
        return T.sigmoid(x)
    raise ValueError(f"unknown activation {mode!r}")


def gap(x):
    """Global average pooling over the two trailing spatial axes."""
    return T.mean(as_tensor(x), axis=(-2, -1), keepdims=True)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize across the channel axis independently at every pixel."""
    x, squeeze = _batched(as_tensor(x))
    mu = T.mean(x, axis=1, keepdims=True)
    xc = x - mu
    var = T.mean(xc * xc, axis=1, keepdims=True)
    y = xc * T.power(var + eps, -0.5)
    return _unbatch(_affine(y, gamma, beta), squeeze)


def _affine(y, gamma, beta):
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    return y * T.reshape(gamma, (1, -1, 1, 1)) + T.reshape(beta, (1, -1, 1, 1))


class RunningStats:
    """Running mean/variance buffers for batch normalization."""

    def __init__(self, channels, momentum=0.9):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum


def batch_norm(x, gamma, beta, state, training=True, eps=1e-5):
    """Per-channel normalization over batch and spatial axes.

    In training mode batch statistics are used and ``state`` is updated as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    x, squeeze = _batched(as_tensor(x))
    if training:
        mu = T.mean(x, axis=(0, 2, 3), keepdims=True)
        xc = x - mu
        var = T.mean(xc * xc, axis=(0, 2, 3), keepdims=True)
        m = state.momentum
        state.mean = m * state.mean + (1 - m) * mu.data.reshape(-1)
        state.var = m * state.var + (1 - m) * var.data.reshape(-1)
        y = xc * T.power(var + eps, -0.5)
    else:
        rm = state.mean.reshape(1, -1, 1, 1)
        rv = state.var.reshape(1, -1, 1, 1)
        y = (x - rm) * (1.0 / np.sqrt(rv + eps))
    return _unbatch(_affine(y, gamma, beta), squeeze)


def scaled_attention(q, k, v, scale):
    """Channel-token attention ``softmax(Q K^T / scale) V``.

    Tokens are channels and the token dimension is ``H*W``, so the
    attention matrix is ``C x C``. ``scale`` is a positive float or a
    one-element Tensor. Returns ``(output, attention_matrix)``.
    """
    q, squeeze = _batched(as_tensor(q))
    k, _ = _batched(as_tensor(k))
    v, _ = _batched(as_tensor(v))
    if q.shape[2:] != k.shape[2:]:
        raise ValueError(f"token dimension mismatch: Q {q.shape} vs K {k.shape}")
    if k.shape[1] != v.shape[1] or q.shape[0] != k.shape[0]:
        raise ValueError(f"K {k.shape} and V {v.shape} disagree on token count")
    B, C, H, W = q.shape
    n = H * W
    qm = T.reshape(q, (B, C, n))
    km = T.reshape(k, (B, k.shape[1], n))
    vm = T.reshape(v, (B, v.shape[1], v.shape[2] * v.shape[3]))
    logits = T.matmul(qm, T.transpose(km, (0, 2, 1)))
    if isinstance(scale, Tensor):
        logits = logits * T.reciprocal(T.reshape(scale, (1, 1, 1)))
    else:
        logits = logits * (1.0 / scale)
    attn = T.softmax(logits, axis=-1)
    out = T.reshape(T.matmul(attn, vm), (B, C) + v.shape[2:])
    return _unbatch(out, squeeze), attn


def temperature(log_s, tokens_dim):
    """Learnable positive temperature ``sqrt(tokens_dim) * exp(log_s)``."""
    return T.exp(log_s) * np.sqrt(tokens_dim)


def window_partition(x, window):
    """``[B, C, H, W]`` to ``[B * nWin, window*window, C]`` tokens."""
    B, C, H, W = x.shape
    if H % window or W % window:
        ph, pw = (-H) % window, (-W) % window
        raise ValueError(
            f"spatial size {H}x{W} is not divisible by window {window}; "
            f"pad by {ph} rows and {pw} columns"
        )
    # rank stays <= 4: split rows first, then swap block/window axes
    t = T.reshape(x, (B * C * (H // window), window, W // window, window))
    t = T.transpose(t, (0, 2, 1, 3))  # B*C*nh, nw, wy, wx
    t = T.reshape(t, (B, C, (H // window) * (W // window), window * window))
    t = T.transpose(t, (0, 2, 3, 1))  # B, nWin, w*w, C
    return T.reshape(t, (B * (H // window) * (W // window), window * window, C))


def window_merge(tokens, shape, window):
    B, C, H, W = shape
    nh, nw = H // window, W // window
    t = T.reshape(tokens, (B, nh * nw, window * window, C))
    t = T.transpose(t, (0, 3, 1, 2))  # B, C, nWin, w*w
    t = T.reshape(t, (B * C * nh, nw, window, window))
    t = T.transpose(t, (0, 2, 1, 3))  # B*C*nh, wy, nw, wx
    return T.reshape(t, (B, C, H, W))


def window_attention(q, k, v, window):
    """Single-head self-attention inside non-overlapping square windows."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    shape = q.shape
    qt = window_partition(q, window)
    kt = window_partition(k, window)
    vt = window_partition(v, window)
    logits = T.matmul(qt, T.transpose(kt, (0, 2, 1))) * (1.0 / np.sqrt(shape[1]))
    attn = T.softmax(logits, axis=-1)
    return window_merge(T.matmul(attn, vt), shape, window)


def _reflect_index(n, p):
    idx = np.arange(-p, n + p)
    idx = np.abs(idx)
    over = idx > n - 1
    idx[over] = 2 * (n - 1) - idx[over]
    return idx


def pad_reflect(x, p):
    """Reflect padding (edge not repeated) of the two spatial axes."""
    H, W = x.shape[-2:]
    if H <= p or W <= p:
        raise ValueError(f"reflect padding {p} needs spatial size > {p}, got {H}x{W}")
    y = T.take(x, _reflect_index(H, p), axis=x.ndim - 2)
    return T.take(y, _reflect_index(W, p), axis=x.ndim - 1)


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


def sobel(x):
    """Sobel x- and y-responses per channel: ``[B, C, H, W] -> [B, 2C, H, W]``.

    Output channels ``0..C-1`` hold x-gradients, ``C..2C-1`` y-gradients.
    """
    x, squeeze = _batched(as_tensor(x))
    C = x.shape[1]
    xp = pad_reflect(x, 1)
    gx = conv2d(xp, np.broadcast_to(SOBEL_X, (C, 1, 3, 3)), depthwise=True, padding=0)
    gy = conv2d(xp, np.broadcast_to(SOBEL_Y, (C, 1, 3, 3)), depthwise=True, padding=0)
    return _unbatch(T.concat([gx, gy], axis=1), squeeze)

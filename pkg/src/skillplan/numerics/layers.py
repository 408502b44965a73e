"""Layer primitives with hand-written backward passes."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ConfigError, ContractError, Tensor, _lift, _node

GN_EPS = 1e-5


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = x @ W + b over the last axis of ``x``."""
    x, W, b = _lift(x), _lift(W), _lift(b)
    if x.shape[-1] != W.shape[0] or W.shape[1:] != b.shape:
        raise ContractError(f"affine shapes do not conform: x{x.shape} W{W.shape} b{b.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    out = (x2 @ W.data + b.data).reshape(x.shape[:-1] + (W.shape[1],))

    def bw(g):
        g2 = np.ascontiguousarray(g).reshape(-1, W.shape[1])
        if x.requires_grad:
            x._accum((g2 @ W.data.T).reshape(x.shape))
        if W.requires_grad:
            W._accum(x2.T @ g2)
        if b.requires_grad:
            b._accum(g2.sum(axis=0))
    return _node(out, (x, W, b), bw)


def conv1d_temporal(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1, same-padded convolution along time.

    x: [batch, in_ch, time]; kernel: [out_ch, in_ch, width] with odd width.
    """
    x, kernel = _lift(x), _lift(kernel)
    out_ch, in_ch, width = kernel.shape
    if width % 2 == 0:
        raise ConfigError(f"conv1d_temporal needs an odd kernel width, got {width}")
    if x.ndim != 3 or x.shape[1] != in_ch:
        raise ContractError(f"conv1d_temporal: x{x.shape} does not match kernel{kernel.shape}")
    B, _, T = x.shape
    pad = width // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    # windows[b, c, j, t] = xp[b, c, t + j]
    windows = sliding_window_view(xp, T, axis=2)
    cols = windows.transpose(1, 2, 0, 3).reshape(in_ch * width, B * T)
    K2 = kernel.data.reshape(out_ch, in_ch * width)
    out = (K2 @ cols).reshape(out_ch, B, T).transpose(1, 0, 2)
    parents = [x, kernel]
    if bias is not None:
        bias = _lift(bias)
        out = out + bias.data[None, :, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(out_ch, B * T)
        if kernel.requires_grad:
            kernel._accum((g2 @ cols.T).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(g2.sum(axis=1))
        if x.requires_grad:
            dcols = (K2.T @ g2).reshape(in_ch, width, B, T)
            dxp = np.zeros((in_ch, B, T + 2 * pad))
            for j in range(width):
                dxp[:, :, j:j + T] += dcols[:, j]
            x._accum(dxp[:, :, pad:pad + T].transpose(1, 0, 2))
    return _node(out, parents, bw)


def group_norm(x: Tensor, groups: int, gain: Tensor, bias: Tensor, eps: float = GN_EPS) -> Tensor:
    """Normalise each (batch, channel-group) slab of [batch, channels, time]."""
    x, gain, bias = _lift(x), _lift(gain), _lift(bias)
    B, C = x.shape[:2]
    if groups <= 0 or C % groups:
        raise ConfigError(f"group_norm: {C} channels not divisible into {groups} groups")
    xg = x.data.reshape(B, groups, -1)
    n = xg.shape[-1]
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(x.shape)
    bshape = (1, C) + (1,) * (x.ndim - 2)
    out = xhat * gain.data.reshape(bshape) + bias.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def bw(g):
        if gain.requires_grad:
            gain._accum((g * xhat).sum(axis=red))
        if bias.requires_grad:
            bias._accum(g.sum(axis=red))
        if x.requires_grad:
            dxh = (g * gain.data.reshape(bshape)).reshape(B, groups, n)
            xh = xhat.reshape(B, groups, n)
            dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                        - xh * (dxh * xh).mean(axis=-1, keepdims=True))
            x._accum(dx.reshape(x.shape))
    return _node(out, (x, gain, bias), bw)


def mish(x: Tensor) -> Tensor:
    x = _lift(x)
    d = x.data
    # tanh(softplus(d)) = n(n+2) / (n(n+2) + 2) with n = e^d; one exp instead of three transcendentals
    n = np.exp(np.minimum(d, 20.0))
    n2 = n * (n + 2.0)
    t = n2 / (n2 + 2.0)
    out = d * t

    def bw(g):
        sig = n / (1.0 + n)
        x._accum(g * (t + d * (1.0 - t * t) * sig))
    return _node(out, (x,), bw)


def avg_pool_time(x: Tensor) -> Tensor:
    """Halve the time axis of [batch, ch, time] by averaging adjacent pairs."""
    x = _lift(x)
    B, C, T = x.shape
    if T % 2:
        raise ConfigError(f"avg_pool_time needs an even length, got {T}")
    out = x.data.reshape(B, C, T // 2, 2).mean(axis=-1)

    def bw(g):
        x._accum(np.repeat(g * 0.5, 2, axis=-1))
    return _node(out, (x,), bw)


def upsample_time(x: Tensor) -> Tensor:
    """Double the time axis by nearest-neighbour repetition."""
    x = _lift(x)
    B, C, T = x.shape
    out = np.repeat(x.data, 2, axis=-1)

    def bw(g):
        x._accum(g.reshape(B, C, T, 2).sum(axis=-1))
    return _node(out, (x,), bw)

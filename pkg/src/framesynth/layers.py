"""Convolution, pooling and upsampling primitives with analytic gradients.

All functions take and return :class:`~framesynth.autodiff.Node` objects in
``B, C, H, W`` layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._resample import resize_matrix
from .autodiff import ContractError, Node, _make, leaky_relu

__all__ = ["ConvLayer", "conv2d", "avg_pool2", "bilinear_upsample2", "leaky_relu"]

ALLOWED_KERNELS = (3, 5, 7)


@dataclass
class ConvLayer:
    """Stride-1, same-padded convolution. ``kernel`` is ``(out, in, k, k)``."""

    kernel: Node
    bias: Node

    def __post_init__(self):
        o, _, kh, kw = self.kernel.shape
        if kh != kw or kh not in ALLOWED_KERNELS:
            raise ContractError(f"kernel must be square with size in {ALLOWED_KERNELS}, got {kh}x{kw}")
        if self.bias.shape != (o,):
            raise ContractError(f"bias shape {self.bias.shape} does not match {o} output channels")

    @property
    def size(self) -> int:
        return self.kernel.shape[2]


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Same-padded patches of ``x (B,C,H,W)`` as a ``(B, C*k*k, H*W)`` array."""
    bsz, c, h, w = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((bsz, c, k, k, h, w), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, dy, dx] = xp[:, :, dy:dy + h, dx:dx + w]
    return cols.reshape(bsz, c * k * k, h * w)


def _col2im(cols: np.ndarray, c: int, k: int, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back onto the image."""
    bsz = cols.shape[0]
    p = (k - 1) // 2
    cols = cols.reshape(bsz, c, k, k, h, w)
    out = np.zeros((bsz, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            out[:, :, dy:dy + h, dx:dx + w] += cols[:, :, dy, dx]
    return out[:, :, p:p + h, p:p + w]


def conv2d(x: Node, layer: ConvLayer) -> Node:
    w, b = layer.kernel, layer.bias
    if x.value.ndim != 4:
        raise ContractError(f"conv2d expects B,C,H,W input, got shape {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ContractError(f"conv2d input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    bsz, c, h, wd = x.shape
    o, k = w.shape[0], w.shape[2]
    cols = _im2col(x.value, k)
    wmat = w.value.reshape(o, c * k * k)
    out = (wmat @ cols).reshape(bsz, o, h, wd) + b.value[None, :, None, None]

    def back(g):
        g2 = g.reshape(bsz, o, h * wd)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _col2im(wmat.T @ g2, c, k, h, wd)
        if w.requires_grad:
            gw = (g2 @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _make(out.astype(x.dtype, copy=False), (x, w, b), back)


def avg_pool2(x: Node) -> Node:
    """Average disjoint 2x2 blocks, halving H and W."""
    bsz, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"avg_pool2 needs even extents, got {h}x{w}")
    out = x.value.reshape(bsz, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def back(g):
        g = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        return (g.astype(x.dtype, copy=False),)

    return _make(out, (x,), back)


def bilinear_upsample2(x: Node) -> Node:
    """Double H and W by bilinear sampling (align-corners-false, clamped)."""
    _, _, h, w = x.shape
    mh = resize_matrix(h, 2 * h, x.dtype)
    mw = resize_matrix(w, 2 * w, x.dtype)
    out = mh @ x.value @ mw.T

    def back(g):
        return (mh.T @ g @ mw,)

    return _make(out, (x,), back)

"""Differentiable backward warping by bilinear sampling."""

from __future__ import annotations

import numpy as np

from .autodiff import ContractError, Node, _make, as_node


def _sample_coords(flow: np.ndarray):
    """Corner indices and weights for sampling at ``(x + u, y + v)``.

    Returns ``(x0, y0, wx, wy, dx_mask, dy_mask)``; the masks are 1 where the
    sampling coordinate moves with the flow (right/down-side derivative inside
    the clamp range), 0 where it is pinned to the border.
    """
    _, _, h, w = flow.shape
    gy, gx = np.meshgrid(np.arange(h, dtype=flow.dtype), np.arange(w, dtype=flow.dtype), indexing="ij")
    sx = gx + flow[:, 0]
    sy = gy + flow[:, 1]
    dx_mask = ((sx >= 0) & (sx < w - 1)).astype(flow.dtype)
    dy_mask = ((sy >= 0) & (sy < h - 1)).astype(flow.dtype)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.minimum(np.floor(sx), max(w - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(sy), max(h - 2, 0)).astype(np.int64)
    wx = (sx - x0).astype(flow.dtype)
    wy = (sy - y0).astype(flow.dtype)
    return x0, y0, wx, wy, dx_mask, dy_mask


def backward_warp(image, flow) -> Node:
    """Sample ``image`` at ``(x + u, y + v)`` for every output pixel.

    ``image`` is ``(B, C, H, W)`` and ``flow`` is ``(B, 2, H, W)`` in pixels,
    channel 0 horizontal (rightward positive) and channel 1 vertical
    (downward positive).  Out-of-range coordinates clamp to the border.
    Gradients flow to both arguments.
    """
    image, flow = as_node(image), as_node(flow)
    if image.value.ndim != 4 or flow.value.ndim != 4:
        raise ContractError("backward_warp expects B,C,H,W image and B,2,H,W flow")
    bsz, c, h, w = image.shape
    if flow.shape != (bsz, 2, h, w):
        raise ContractError(f"flow shape {flow.shape} does not match image {image.shape}")
    if not np.all(np.isfinite(flow.value)):
        raise ContractError("flow contains non-finite values")

    img = image.value
    x0, y0, wx, wy, dx_mask, dy_mask = _sample_coords(flow.value)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    flat = img.reshape(bsz, c, h * w)
    idx = [(y0 * w + x0), (y0 * w + x1), (y1 * w + x0), (y1 * w + x1)]

    def gather(i):
        return np.take_along_axis(flat, i.reshape(bsz, 1, h * w), axis=2).reshape(bsz, c, h, w)

    i00, i01, i10, i11 = (gather(i) for i in idx)
    wx_ = wx[:, None]
    wy_ = wy[:, None]
    # product form keeps integer coordinates exact (weights of exactly 0 and 1)
    top = (1 - wx_) * i00 + wx_ * i01
    bot = (1 - wx_) * i10 + wx_ * i11
    out = (1 - wy_) * top + wy_ * bot

    def back(g):
        g_img = g_flow = None
        if image.requires_grad:
            weights = [(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy]
            offs = (np.arange(bsz * c) * (h * w)).reshape(bsz, c, 1)
            all_idx = np.concatenate([(i.reshape(bsz, 1, h * w) + offs) for i in idx], axis=2)
            all_w = np.concatenate([(g * wt[:, None]).reshape(bsz, c, h * w) for wt in weights], axis=2)
            g_img = np.bincount(all_idx.ravel(), weights=all_w.ravel(), minlength=bsz * c * h * w)
            g_img = g_img.reshape(bsz, c, h, w).astype(img.dtype, copy=False)
        if flow.requires_grad:
            d_sx = (1 - wy_) * (i01 - i00) + wy_ * (i11 - i10)
            d_sy = bot - top
            gu = (g * d_sx).sum(axis=1) * dx_mask
            gv = (g * d_sy).sum(axis=1) * dy_mask
            g_flow = np.stack([gu, gv], axis=1).astype(flow.dtype, copy=False)
        return g_img, g_flow

    return _make(out, (image, flow), back)


def warp_reference(image: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Per-pixel scalar bilinear sampler used as an independent check.

    ``image`` is ``(C, H, W)``, ``flow`` is ``(2, H, W)``; computed in float64.
    """
    c, h, w = image.shape
    out = np.zeros((c, h, w))
    for y in range(h):
        for x in range(w):
            px = min(max(x + float(flow[0, y, x]), 0.0), w - 1.0)
            py = min(max(y + float(flow[1, y, x]), 0.0), h - 1.0)
            xa, ya = int(np.floor(px)), int(np.floor(py))
            xb, yb = min(xa + 1, w - 1), min(ya + 1, h - 1)
            ax, ay = px - xa, py - ya
            for ch in range(c):
                out[ch, y, x] = ((1 - ax) * (1 - ay) * image[ch, ya, xa] + ax * (1 - ay) * image[ch, ya, xb]
                                 + (1 - ax) * ay * image[ch, yb, xa] + ax * ay * image[ch, yb, xb])
    return out

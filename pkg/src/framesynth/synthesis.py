"""Intermediate-flow approximation, visibility and visibility-weighted fusion.

Flows and images here are batched ``B, C, H, W`` nodes (plain arrays are
accepted and treated as constants).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Node
from .warp import backward_warp


def check_time(t: float) -> float:
    t = float(t)
    if not 0.0 < t < 1.0:
        raise ContractError(f"time step must lie in (0, 1), got {t}")
    return t


def _same_shape(*nodes):
    ref = nodes[0].shape
    for n in nodes[1:]:
        if n.shape != ref:
            raise ContractError(f"shape mismatch: {ref} vs {n.shape}")


def approximate_intermediate_flow(f01, f10, t: float) -> tuple[Node, Node]:
    """Blend the bi-directional input flows into flows from time ``t``.

    Returns ``(F_t->0, F_t->1)``::

        F_t->0 = -(1 - t) t F_0->1 + t^2 F_1->0
        F_t->1 = (1 - t)^2 F_0->1 - t (1 - t) F_1->0

    ``t`` is not range-checked so the endpoint identities can be evaluated.
    """
    f01, f10 = ad.as_node(f01), ad.as_node(f10)
    _same_shape(f01, f10)
    t = float(t)
    ft0 = ad.add(ad.scale(f01, -(1.0 - t) * t), ad.scale(f10, t * t))
    ft1 = ad.add(ad.scale(f01, (1.0 - t) ** 2), ad.scale(f10, -t * (1.0 - t)))
    return ft0, ft1


def approximate_single_direction(f01, f10, t: float, source: str = "forward") -> tuple[Node, Node]:
    """Diagnostic: borrow flow from one input direction only.

    ``source="forward"`` uses only ``F_0->1`` (``F_t->1 = (1-t) F_0->1``,
    ``F_t->0 = -t F_0->1``); ``"backward"`` uses only ``F_1->0``.
    Not used by the trained pipeline.
    """
    f01, f10 = ad.as_node(f01), ad.as_node(f10)
    _same_shape(f01, f10)
    t = float(t)
    if source == "forward":
        return ad.scale(f01, -t), ad.scale(f01, 1.0 - t)
    if source == "backward":
        return ad.scale(f10, t), ad.scale(f10, -(1.0 - t))
    raise ValueError(f"unknown source {source!r}")


def apply_flow_residual(approx, residual) -> Node:
    approx, residual = ad.as_node(approx), ad.as_node(residual)
    _same_shape(approx, residual)
    return ad.add(approx, residual)


def visibility_from_logits(raw) -> tuple[Node, Node]:
    """``(V_t<-0, V_t<-1)`` with ``V_t<-1 = 1 - V_t<-0`` by construction."""
    v0 = ad.sigmoid(ad.as_node(raw))
    return v0, ad.sub(1.0, v0)


def fusion_normalizer(v0, t: float) -> Node:
    """``Z = (1 - t) V0 + t (1 - V0)``; bounded below by ``min(t, 1 - t)``."""
    v0 = ad.as_node(v0)
    return ad.add(ad.scale(v0, 1.0 - 2.0 * t), t)


def fuse_frames(i0, i1, ft0, ft1, v0, t: float) -> Node:
    """Warp both inputs to time ``t`` and blend them by time and visibility.

    ``v0`` is ``V_t<-0`` with shape ``(B, 1, H, W)``; ``V_t<-1 = 1 - v0``.
    """
    t = check_time(t)
    i0, i1, ft0, ft1, v0 = (ad.as_node(x) for x in (i0, i1, ft0, ft1, v0))
    _same_shape(i0, i1)
    _same_shape(ft0, ft1)
    bsz, _, h, w = i0.shape
    if v0.shape != (bsz, 1, h, w):
        raise ContractError(f"visibility shape {v0.shape} does not match images {i0.shape}")
    g0 = backward_warp(i0, ft0)
    g1 = backward_warp(i1, ft1)
    w0 = ad.scale(v0, 1.0 - t)
    w1 = ad.scale(ad.sub(1.0, v0), t)
    num = ad.add(ad.mul(w0, g0), ad.mul(w1, g1))
    return ad.div(num, ad.add(w0, w1))


def fuse_frames_reference(g0: np.ndarray, g1: np.ndarray, v0: np.ndarray, t: float) -> np.ndarray:
    """Per-pixel float64 loop form of the fusion on already-warped images."""
    c, h, w = g0.shape
    out = np.empty((c, h, w))
    for y in range(h):
        for x in range(w):
            a = (1.0 - t) * float(v0[0, y, x])
            b = t * (1.0 - float(v0[0, y, x]))
            for ch in range(c):
                out[ch, y, x] = (a * g0[ch, y, x] + b * g1[ch, y, x]) / (a + b)
    return out

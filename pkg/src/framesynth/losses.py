"""Training objective: reconstruction, perceptual, warping and smoothness terms.

Every ``||.||`` is reduced as a per-element mean so the weights do not depend
on resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Node
from .warp import backward_warp

FeatureExtractor = Callable[[Node], Node]


def identity_features(x: Node) -> Node:
    return x


@dataclass(frozen=True)
class LossWeights:
    reconstruction: float = 0.8
    perceptual: float = 0.005
    warping: float = 0.4
    smoothness: float = 1.0

    def __post_init__(self):
        if min(self.reconstruction, self.perceptual, self.warping, self.smoothness) < 0:
            raise ContractError("loss weights must be nonnegative")


def _check_pairs(preds, targets):
    if len(preds) != len(targets) or not preds:
        raise ContractError(f"need equal, nonzero counts of predictions and targets ({len(preds)} vs {len(targets)})")
    for p, t in zip(preds, targets):
        if ad.as_node(p).shape != ad.as_node(t).shape:
            raise ContractError(f"shape mismatch: {ad.as_node(p).shape} vs {ad.as_node(t).shape}")


def l1(a, b) -> Node:
    return ad.mean(ad.absolute(ad.sub(a, b)))


def reconstruction_loss(preds: Sequence, targets: Sequence) -> Node:
    _check_pairs(preds, targets)
    return ad.scale(ad.add_n([l1(p, t) for p, t in zip(preds, targets)]), 1.0 / len(preds))


def perceptual_loss(preds: Sequence, targets: Sequence, fx: FeatureExtractor = identity_features) -> Node:
    """Mean squared feature difference, averaged over the frames."""
    _check_pairs(preds, targets)
    terms = [ad.mean(ad.square(ad.sub(fx(ad.as_node(p)), fx(ad.as_node(t))))) for p, t in zip(preds, targets)]
    return ad.scale(ad.add_n(terms), 1.0 / len(preds))


def warping_loss(i0, i1, targets: Sequence, f01, f10, approx_flows: Sequence) -> Node:
    """Photometric error of the input flows and of the approximated intermediate flows.

    ``approx_flows`` holds ``(F^_t->0, F^_t->1)`` per target frame.
    """
    if len(targets) != len(approx_flows) or not targets:
        raise ContractError("need one approximated flow pair per target frame")
    i0, i1 = ad.as_node(i0), ad.as_node(i1)
    if i0.shape != i1.shape:
        raise ContractError(f"shape mismatch: {i0.shape} vs {i1.shape}")
    n = len(targets)
    terms = [l1(i0, backward_warp(i1, f01)), l1(i1, backward_warp(i0, f10))]
    terms += [ad.scale(l1(it, backward_warp(i0, ft0)), 1.0 / n) for it, (ft0, _) in zip(targets, approx_flows)]
    terms += [ad.scale(l1(it, backward_warp(i1, ft1)), 1.0 / n) for it, (_, ft1) in zip(targets, approx_flows)]
    return ad.add_n(terms)


def _gradient_l1(flow: Node) -> Node:
    """Sum over channels and axes of the mean |forward difference|.

    Out-of-range differences at the right/bottom edge are omitted.
    """
    v = flow.value
    c = v.shape[-3]
    h, w = v.shape[-2:]
    terms = []
    if w > 1:
        terms.append(ad.mean(ad.absolute(ad.apply(lambda a: a[..., 1:] - a[..., :-1], flow, _dx_vjp))))
    if h > 1:
        terms.append(ad.mean(ad.absolute(ad.apply(lambda a: a[..., 1:, :] - a[..., :-1, :], flow, _dy_vjp))))
    if not terms:
        return ad.scale(ad.mean(flow), 0.0)
    return ad.scale(ad.add_n(terms), float(c))


def _dx_vjp(g, a):
    out = np.zeros_like(a)
    out[..., 1:] += g
    out[..., :-1] -= g
    return out


def _dy_vjp(g, a):
    out = np.zeros_like(a)
    out[..., 1:, :] += g
    out[..., :-1, :] -= g
    return out


def smoothness_loss(f01, f10) -> Node:
    f01, f10 = ad.as_node(f01), ad.as_node(f10)
    if f01.shape != f10.shape:
        raise ContractError(f"shape mismatch: {f01.shape} vs {f10.shape}")
    return ad.add(_gradient_l1(f01), _gradient_l1(f10))


def total_loss(terms: dict, w: LossWeights = LossWeights()) -> Node:
    """``terms`` maps ``reconstruction``/``perceptual``/``warping``/``smoothness`` to scalars."""
    parts = [ad.scale(ad.as_node(terms[name]), getattr(w, name))
             for name in ("reconstruction", "perceptual", "warping", "smoothness")]
    return ad.add_n(parts)

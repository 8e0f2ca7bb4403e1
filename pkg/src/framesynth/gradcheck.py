"""Central finite-difference checks for the differentiation engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node


def relative_error(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def numeric_grad(fn: Callable[[], Node], x: Node, eps: float = 1e-5, coords=None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``x.value``.

    ``coords`` restricts the check to a list of flat indices (others stay 0).
    """
    out = np.zeros(x.value.shape, dtype=np.float64)
    flat = x.value.reshape(-1)
    of = out.reshape(-1)
    for i in (range(flat.size) if coords is None else coords):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn().value)
        flat[i] = orig - eps
        lo = float(fn().value)
        flat[i] = orig
        of[i] = (hi - lo) / (2 * eps)
    return out


def analytic_grads(fn: Callable[[], Node], inputs: Sequence[Node]) -> list[np.ndarray]:
    for x in inputs:
        x.zero_grad()
    ad.backward(fn())
    return [x.grad.copy() for x in inputs]


def check_gradients(fn: Callable[[], Node], inputs: Sequence[Node], eps: float = 1e-5,
                    max_coords: int | None = None, rng=None) -> float:
    """Largest relative error between analytic and numeric gradients over ``inputs``.

    With ``max_coords`` only that many random entries per input are probed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for x, g in zip(inputs, analytic_grads(fn, inputs)):
        coords = None
        if max_coords is not None and x.value.size > max_coords:
            coords = rng.choice(x.value.size, size=max_coords, replace=False)
        num = numeric_grad(fn, x, eps, coords)
        if coords is not None:
            worst = max(worst, relative_error(g.reshape(-1)[coords], num.reshape(-1)[coords]))
        else:
            worst = max(worst, relative_error(g, num))
    return worst


def check_directional(fn: Callable[[], Node], inputs: Sequence[Node], rng, eps: float = 1e-5) -> float:
    """Relative error of the derivative along one random direction over all inputs.

    Compares ``<grad, d>`` with ``(f(x + eps d) - f(x - eps d)) / (2 eps)``
    for a unit-norm ``d`` spanning every entry of every input.
    """
    grads = analytic_grads(fn, inputs)
    dirs = [rng.standard_normal(x.value.shape) for x in inputs]
    norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
    dirs = [d / norm for d in dirs]
    analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
    orig = [x.value.copy() for x in inputs]

    def shifted(sign):
        for x, o, d in zip(inputs, orig, dirs):
            x.value[...] = o + sign * eps * d
        return float(fn().value)

    hi, lo = shifted(1.0), shifted(-1.0)
    for x, o in zip(inputs, orig):
        x.value[...] = o
    numeric = (hi - lo) / (2 * eps)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)

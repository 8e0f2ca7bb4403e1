"""Adam with bias correction, and the step-decay learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Update ``params[name].value`` in place from ``grads[name]``."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, node in params.items():
        g = grads[name]
        if g.shape != node.value.shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, parameter has {node.value.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(node.value)
            state.v[name] = np.zeros_like(node.value)
        elif m.shape != g.shape:
            raise ContractError(f"parameter {name!r} changed shape between steps")
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        node.value -= update.astype(node.value.dtype, copy=False)


def lr_schedule(epoch: int, base_lr: float = 1e-4, decay: float = 10.0, every: int = 200) -> float:
    if epoch < 0:
        raise ContractError("epoch must be >= 0")
    return base_lr * decay ** (-math.floor(epoch / every))

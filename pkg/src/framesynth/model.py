"""Full two-stage interpolation model.

:class:`Interpolator` pairs the flow-computation and flow-interpolation nets.
:meth:`Interpolator.forward` runs the differentiable pipeline for a list of
time steps and keeps every intermediate the losses need;
:meth:`Interpolator.interpolate` is the inference entry point for raw frames.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .networks import (ModelParams, build_unet, flow_computation_config, flow_interpolation_config,
                       load_checkpoint, run_flow_computation, run_flow_interpolation, save_checkpoint)
from .synthesis import (apply_flow_residual, approximate_intermediate_flow, check_time, fuse_frames,
                        visibility_from_logits)
from .warp import backward_warp


@dataclass
class StepOutput:
    """Everything computed for one time step."""

    t: float
    frame: Node
    ft0_hat: Node
    ft1_hat: Node
    ft0: Node
    ft1: Node
    v0: Node


@dataclass
class ForwardOutput:
    f01: Node
    f10: Node
    steps: list[StepOutput] = field(default_factory=list)

    @property
    def frames(self) -> list[Node]:
        return [s.frame for s in self.steps]


@dataclass
class Interpolator:
    flow_net: ModelParams
    interp_net: ModelParams

    @classmethod
    def create(cls, width_factor: float = 1.0, seed: int = 0, cross_link: bool = True) -> "Interpolator":
        rng = np.random.default_rng(seed)
        return cls(build_unet(flow_computation_config(width_factor), rng),
                   build_unet(flow_interpolation_config(width_factor, cross_link), rng))

    def parameters(self) -> "OrderedDict[str, Node]":
        out: OrderedDict[str, Node] = OrderedDict()
        for prefix, net in (("flow", self.flow_net), ("interp", self.interp_net)):
            for name, node in net:
                out[f"{prefix}.{name}"] = node
        return out

    def zero_grad(self):
        self.flow_net.zero_grad()
        self.interp_net.zero_grad()

    def astype(self, dtype) -> "Interpolator":
        return Interpolator(self.flow_net.astype(dtype), self.interp_net.astype(dtype))

    @property
    def multiple(self) -> int:
        return self.flow_net.config.multiple

    def save(self, path) -> None:
        save_checkpoint({"flow": self.flow_net, "interp": self.interp_net}, path)

    @classmethod
    def load(cls, path) -> "Interpolator":
        nets = load_checkpoint(path)
        if set(nets) != {"flow", "interp"}:
            raise ValueError(f"{path}: checkpoint must hold 'flow' and 'interp' networks, found {sorted(nets)}")
        return cls(nets["flow"], nets["interp"])

    def forward(self, i0, i1, ts, refine: bool = True, use_visibility: bool = True) -> ForwardOutput:
        """Differentiable pipeline over ``(B, 3, H, W)`` frames in [0, 255].

        The bi-directional flows are computed once and shared by every ``t``.
        """
        i0, i1 = ad.as_node(i0), ad.as_node(i1)
        f01, f10, feats = run_flow_computation(self.flow_net, i0, i1, return_features=True)
        out = ForwardOutput(f01, f10)
        for t in ts:
            t = check_time(t)
            ft0_hat, ft1_hat = approximate_intermediate_flow(f01, f10, t)
            g0 = backward_warp(i0, ft0_hat)
            g1 = backward_warp(i1, ft1_hat)
            cross = feats if self.interp_net.config.cross_link else None
            d0, d1, logit = run_flow_interpolation(self.interp_net, i0, i1, f01, f10, ft0_hat, ft1_hat,
                                                   g0, g1, flow_features=cross)
            if refine:
                ft0, ft1 = apply_flow_residual(ft0_hat, d0), apply_flow_residual(ft1_hat, d1)
            else:
                ft0, ft1 = ft0_hat, ft1_hat
            if use_visibility:
                v0, _ = visibility_from_logits(logit)
            else:
                v0 = ad.const(np.full(logit.shape, 0.5))
            frame = fuse_frames(i0, i1, ft0, ft1, v0, t)
            out.steps.append(StepOutput(t, frame, ft0_hat, ft1_hat, ft0, ft1, v0))
        return out

    def interpolate(self, frame0: np.ndarray, frame1: np.ndarray, ts) -> list[np.ndarray]:
        """Predict ``(C, H, W)`` frames at each ``t``; clamps output to [0, 255].

        Frames whose extents are not multiples of the network's requirement are
        reflect-padded and cropped back.  Each ``t`` is computed independently,
        so results do not depend on how the time steps are grouped.
        """
        return [self._interpolate_one(frame0, frame1, t) for t in ts]

    def _prepare(self, frame0, frame1):
        gray = frame0.shape[0] == 1
        if gray:
            frame0, frame1 = np.repeat(frame0, 3, 0), np.repeat(frame1, 3, 0)
        _, h, w = frame0.shape
        m = self.multiple
        ph, pw = (-h) % m, (-w) % m
        pad = ((0, 0), (0, ph), (0, pw))
        mode = "reflect" if ph < h and pw < w else "edge"
        a = np.pad(frame0, pad, mode=mode)[None].astype(np.float32)
        b = np.pad(frame1, pad, mode=mode)[None].astype(np.float32)
        return a, b, h, w, gray

    def _interpolate_one(self, frame0, frame1, t) -> np.ndarray:
        a, b, h, w, gray = self._prepare(frame0, frame1)
        res = self.forward(ad.Node(a), ad.Node(b), [t])
        out = np.clip(res.steps[0].frame.value[0, :, :h, :w], 0.0, 255.0)
        return out[:1] if gray else out

    def compute_flows(self, frame0: np.ndarray, frame1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bi-directional flows ``(F_0->1, F_1->0)`` as ``(2, H, W)`` arrays."""
        a, b, h, w, _ = self._prepare(frame0, frame1)
        f01, f10 = run_flow_computation(self.flow_net, ad.Node(a), ad.Node(b))
        return f01.value[0, :, :h, :w].copy(), f10.value[0, :, :h, :w].copy()

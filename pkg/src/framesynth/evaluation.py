"""Held-out evaluation on synthetic scenes with known motion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .data import SyntheticScene, random_scene, sample_times, translating_square_scene
from .model import Interpolator
from .synthesis import fuse_frames


def oracle_fusion_psnrs(scene: SyntheticScene | None = None, ts=None, border: int = 8) -> dict[float, float]:
    """PSNR of fusing with the true intermediate flows and visibility.

    Pixels within ``border`` of the frame edge are excluded, since content
    entering the frame there has no source in either input.
    """
    scene = scene or translating_square_scene()
    ts = sample_times(7) if ts is None else ts
    i0, i1 = scene.frame(0.0)[None], scene.frame(1.0)[None]
    b = border
    out = {}
    for t in ts:
        ft0, ft1 = scene.intermediate_flows(t)
        pred = fuse_frames(i0, i1, ft0[None], ft1[None], scene.visibility(t)[None], t).value[0]
        gt = scene.frame(t)
        out[t] = metrics.psnr(pred[:, b:-b, b:-b], gt[:, b:-b, b:-b]) if b else metrics.psnr(pred, gt)
    return out


def held_out_scenes(n: int = 10, seed: int = 999, size: int = 64, max_speed: float = 3.0,
                    n_objects: int = 0) -> list[SyntheticScene]:
    """Scenes drawn from a seed stream disjoint from the training one."""
    return [random_scene(np.random.default_rng([seed, k]), size, size, max_speed, n_objects) for k in range(n)]


@dataclass
class SceneScores:
    psnr: float            # mean over scenes and time steps
    baseline_psnr: float   # frame averaging at the same time steps
    epe: float             # F_0->1 against the true flow

    @property
    def gain(self) -> float:
        return self.psnr - self.baseline_psnr


def evaluate_scenes(model: Interpolator, scenes, ts=(0.5,)) -> SceneScores:
    """Score ``model`` on rendered scenes at the given time steps."""
    psnrs, base, epes = [], [], []
    for sc in scenes:
        f0, f1 = sc.frame(0.0), sc.frame(1.0)
        f01, _ = model.compute_flows(f0, f1)
        epes.append(metrics.epe(f01, sc.flow_01()))
        for t, pred in zip(ts, model.interpolate(f0, f1, list(ts))):
            gt = sc.frame(t)
            psnrs.append(metrics.psnr(pred, gt))
            base.append(metrics.psnr((1 - t) * f0 + t * f1, gt))
    # with no time steps only the flow is scored
    psnr = float(np.mean(psnrs)) if psnrs else float("nan")
    baseline = float(np.mean(base)) if base else float("nan")
    return SceneScores(psnr, baseline, float(np.mean(epes)))

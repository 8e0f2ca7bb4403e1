"""Image and flow quality metrics.

Images are ``(C, H, W)`` arrays in [0, 255]; flows are ``(2, H, W)``.
Everything is computed in float64.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import ContractError

PEAK = 255.0
PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
LUMA = np.array([0.299, 0.587, 0.114])


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _mask(mask, shape) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask).astype(bool)
    m = m.reshape(m.shape[-2:]) if m.ndim == 3 else m
    if m.shape != tuple(shape[-2:]):
        raise ContractError(f"mask shape {m.shape} does not match image {shape[-2:]}")
    if not m.any():
        raise ContractError("mask selects no pixels")
    return m


def mse(a, b, mask=None) -> float:
    a, b = _pair(a, b)
    d2 = (a - b) ** 2
    m = _mask(mask, a.shape)
    if m is not None:
        return float(d2[..., m].mean())
    return float(d2.mean())


def psnr(a, b) -> float:
    """``10 log10(255^2 / MSE)``; ``inf`` for identical images."""
    e = mse(a, b)
    if e == 0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / e)


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] == 3:
        return np.tensordot(LUMA, img, axes=(0, 0))
    if img.shape[0] == 1:
        return img[0]
    raise ContractError(f"expected 1 or 3 channels, got {img.shape[0]}")


def _filter_valid(x: np.ndarray, g1: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation
    n = len(g1)
    rows = np.lib.stride_tricks.sliding_window_view(x, n, axis=0) @ g1
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=1) @ g1


def ssim_map(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    ya, yb = to_luma(a), to_luma(b)
    if min(ya.shape) < SSIM_WINDOW:
        raise ContractError(f"image {ya.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2
    g1 = np.exp(-r * r / (2 * SSIM_SIGMA ** 2))
    g1 /= g1.sum()
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    mu_a = _filter_valid(ya, g1)
    mu_b = _filter_valid(yb, g1)
    saa = _filter_valid(ya * ya, g1) - mu_a * mu_a
    sbb = _filter_valid(yb * yb, g1) - mu_b * mu_b
    sab = _filter_valid(ya * yb, g1) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))


def ssim(a, b) -> float:
    """Mean SSIM over all full 11x11 Gaussian windows of the luma channel."""
    return float(ssim_map(a, b).mean())


def interpolation_error(pred, gt, mask=None) -> float:
    """RMS difference over (masked) pixels and channels."""
    return math.sqrt(mse(pred, gt, mask))


def epe(pred, gt, mask=None) -> float:
    """Mean end-point error over (masked) pixels."""
    pred, gt = _pair(pred, gt)
    if pred.shape[-3] != 2:
        raise ContractError(f"flow fields need 2 channels, got shape {pred.shape}")
    d = np.sqrt(((pred - gt) ** 2).sum(axis=-3))
    m = _mask(mask, pred.shape)
    return float(d[..., m].mean() if m is not None else d.mean())


@dataclass
class ReportRow:
    t: float | str
    psnr: float
    ssim: float
    ie: float


def per_timestep_report(preds: dict, gts: dict, mask=None) -> list[ReportRow]:
    """One row per time step (sorted by ``t``) plus a final ``"mean"`` row.

    ``preds`` and ``gts`` map ``t`` to an image (or a list of images, which
    are averaged per metric).
    """
    if set(preds) != set(gts) or not preds:
        raise ContractError(f"time steps differ: {sorted(set(preds) ^ set(gts))}")
    rows = []
    for t in sorted(preds):
        ps = preds[t] if isinstance(preds[t], (list, tuple)) else [preds[t]]
        gs = gts[t] if isinstance(gts[t], (list, tuple)) else [gts[t]]
        if len(ps) != len(gs):
            raise ContractError(f"t={t}: {len(ps)} predictions vs {len(gs)} ground truths")
        rows.append(ReportRow(
            t,
            float(np.mean([psnr(p, g) if mask is None else _masked_psnr(p, g, mask) for p, g in zip(ps, gs)])),
            float(np.mean([ssim(p, g) for p, g in zip(ps, gs)])),
            float(np.mean([interpolation_error(p, g, mask) for p, g in zip(ps, gs)])),
        ))
    rows.append(ReportRow("mean", float(np.mean([r.psnr for r in rows])),
                          float(np.mean([r.ssim for r in rows])), float(np.mean([r.ie for r in rows]))))
    return rows


def _masked_psnr(a, b, mask) -> float:
    e = mse(a, b, mask)
    return math.inf if e == 0 else 10.0 * math.log10(PEAK * PEAK / e)


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if math.isinf(x):
        x = PSNR_CAP
    return f"{x:.6f}"


def report_csv(rows: Sequence[ReportRow], label: str = "t") -> str:
    """CSV text with header ``t,psnr,ssim,ie``; infinite PSNR is written as 99."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([label, "psnr", "ssim", "ie"])
    for r in rows:
        w.writerow([_fmt(r.t) if not isinstance(r.t, str) else r.t, _fmt(min(r.psnr, PSNR_CAP)),
                    _fmt(r.ssim), _fmt(r.ie)])
    return buf.getvalue()

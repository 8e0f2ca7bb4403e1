"""Fast invariant suite behind ``framesynth selftest``.

Each check returns a short detail string on success and raises
``AssertionError`` on failure.  ``faults`` names checks whose subject is
deliberately perturbed, so the suite can be shown to catch real defects.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from . import io as fio
from . import metrics
from .autodiff import leaf, precision
from .gradcheck import check_directional, check_gradients
from .layers import ConvLayer, avg_pool2, bilinear_upsample2, conv2d
from .synthesis import approximate_intermediate_flow, fuse_frames, fusion_normalizer, visibility_from_logits
from .warp import backward_warp, warp_reference

FAULTS = ("flow-approx",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    seconds: float
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<24} {1000 * self.seconds:8.1f} ms  {self.detail}"


def _perturbed_approx(f01, f10, t):
    a0, a1 = approximate_intermediate_flow(f01, f10, t)
    return ad.add(a0, ad.scale(ad.as_node(f10), 1e-3)), a1


def check_flow_approx_endpoints(approx=approximate_intermediate_flow, n: int = 200) -> str:
    rng = np.random.default_rng(0)
    worst = 0.0
    with precision(np.float64):
        for _ in range(n):
            f01, f10 = rng.normal(0, 10, (2, 1, 2, 4, 4))
            z0, g01 = approx(f01, f10, 0.0)
            g10, z1 = approx(f01, f10, 1.0)
            worst = max(worst, np.abs(z0.value).max(), np.abs(g01.value - f01).max(),
                        np.abs(g10.value - f10).max(), np.abs(z1.value).max())
    assert worst <= 1e-6, f"max endpoint deviation {worst:.3g}"
    return f"max deviation {worst:.1e}"


def check_warp_oracle(n: int = 20) -> str:
    rng = np.random.default_rng(1)
    worst = 0.0
    with precision(np.float64):
        for _ in range(n):
            img = rng.uniform(0, 255, (3, 16, 16))
            flow = rng.uniform(-5, 5, (2, 16, 16))
            out = backward_warp(leaf(img[None]), leaf(flow[None])).value[0]
            worst = max(worst, np.abs(out - warp_reference(img, flow)).max())
    assert worst <= 1e-6, f"max deviation {worst:.3g}"
    return f"max deviation {worst:.1e}"


def check_warp_identity() -> str:
    img = np.random.default_rng(2).uniform(0, 255, (1, 3, 16, 16)).astype(np.float32)
    out = backward_warp(img, np.zeros((1, 2, 16, 16), np.float32)).value
    assert out.tobytes() == img.tobytes(), "zero flow changed the image"
    return "exact"


def check_layer_gradients() -> str:
    rng = np.random.default_rng(3)
    worst = 0.0
    with precision(np.float64):
        x = leaf(rng.standard_normal((1, 2, 6, 6)))
        layer = ConvLayer(leaf(rng.standard_normal((2, 2, 3, 3))), leaf(rng.standard_normal(2)))
        for op, extra in ((lambda v: conv2d(v, layer), [layer.kernel, layer.bias]),
                          (lambda v: ad.leaky_relu(v, 0.1), []), (avg_pool2, []), (bilinear_upsample2, [])):
            w = rng.standard_normal(op(x).shape)
            worst = max(worst, check_gradients(lambda: ad.total(ad.mul(op(x), w)), [x] + extra))
    assert worst <= 1e-3, f"relative error {worst:.3g}"
    return f"relative error {worst:.1e}"


def check_warp_gradients() -> str:
    rng = np.random.default_rng(4)
    with precision(np.float64):
        img = leaf(rng.uniform(0, 255, (1, 2, 6, 6)))
        flow = leaf(rng.uniform(-2, 2, (1, 2, 6, 6)) + 0.031)
        w = rng.standard_normal((1, 2, 6, 6))
        err = check_gradients(lambda: ad.total(ad.mul(backward_warp(img, flow), w)), [img, flow])
    assert err <= 1e-3, f"relative error {err:.3g}"
    return f"relative error {err:.1e}"


def check_fusion_bounds(n: int = 200) -> str:
    rng = np.random.default_rng(5)
    with precision(np.float64):
        for _ in range(n):
            t = float(rng.uniform(0.01, 0.99))
            v0, v1 = visibility_from_logits(rng.normal(0, 5, (1, 1, 4, 4)))
            assert np.all(v0.value + v1.value == 1.0), "visibility pair does not sum to 1"
            z = fusion_normalizer(v0, t).value
            assert np.all(z >= min(t, 1 - t) - 1e-15), "normalizer below min(t, 1-t)"
            i0, i1 = rng.uniform(0, 255, (2, 1, 3, 4, 4))
            ft0, ft1 = rng.uniform(-2, 2, (2, 1, 2, 4, 4))
            out = fuse_frames(i0, i1, ft0, ft1, v0, t).value
            g0, g1 = backward_warp(i0, ft0).value, backward_warp(i1, ft1).value
            lo, hi = np.minimum(g0, g1) - 1e-9, np.maximum(g0, g1) + 1e-9
            assert np.all((out >= lo) & (out <= hi)), "fused pixel outside the warped pair"
    return f"{n} instances"


def check_oracle_fusion() -> str:
    from .evaluation import oracle_fusion_psnrs

    psnrs = oracle_fusion_psnrs()
    worst = min(psnrs.values())
    assert worst >= 40.0, f"lowest PSNR {worst:.2f} dB"
    return f"lowest PSNR {worst:.2f} dB"


def check_metrics() -> str:
    rng = np.random.default_rng(6)
    a = rng.uniform(0, 255, (3, 16, 16))
    assert abs(metrics.ssim(a, a) - 1.0) <= 1e-12, "SSIM(a, a) != 1"
    assert metrics.interpolation_error(a, a + 10) == 10.0, "IE of a constant offset"
    assert abs(metrics.psnr(a, a + 16) - 10 * np.log10(255 ** 2 / 256)) <= 1e-9, "PSNR of a constant offset"
    f = rng.normal(size=(2, 8, 8))
    g = f.copy()
    g[0] += 3
    g[1] += 4
    assert abs(metrics.epe(g, f) - 5.0) <= 1e-12, "EPE of a (3, 4) offset"
    return "ok"


def check_full_loss_gradient() -> str:
    from .model import Interpolator
    from .train import loss_terms
    from .losses import total_loss

    rng = np.random.default_rng(7)
    model = Interpolator.create(1 / 16, seed=0).astype(np.float64)
    with precision(np.float64):
        i0, i1, it = rng.uniform(0, 255, (3, 1, 3, 32, 32))
        params = list(model.parameters().values())[:6]
        err = check_directional(lambda: total_loss(loss_terms(model, i0, i1, [it], [0.5])[0]), params, rng)
    assert err <= 1e-3, f"relative error {err:.3g}"
    return f"relative error {err:.1e}"


def check_flo_round_trip() -> str:
    import tempfile
    from pathlib import Path

    flow = np.random.default_rng(8).normal(size=(2, 5, 7)).astype(np.float32)
    with tempfile.TemporaryDirectory() as d:
        fio.write_flo(flow, Path(d) / "f.flo")
        back = fio.read_flo(Path(d) / "f.flo")
    assert back.tobytes() == flow.tobytes(), "flow file round trip changed values"
    return "exact"


def checks(faults: Iterable[str] = ()) -> list[tuple[str, Callable[[], str]]]:
    faults = set(faults)
    unknown = faults - set(FAULTS)
    if unknown:
        raise ValueError(f"unknown fault {sorted(unknown)[0]!r}; choose from {', '.join(FAULTS)}")
    approx = _perturbed_approx if "flow-approx" in faults else approximate_intermediate_flow
    return [
        ("flow-approx endpoint", lambda: check_flow_approx_endpoints(approx)),
        ("warp oracle", check_warp_oracle),
        ("warp zero-flow identity", check_warp_identity),
        ("layer gradients", check_layer_gradients),
        ("warp gradients", check_warp_gradients),
        ("full loss gradient", check_full_loss_gradient),
        ("visibility/fusion bounds", check_fusion_bounds),
        ("oracle fusion", check_oracle_fusion),
        ("metrics", check_metrics),
        ("flow file round trip", check_flo_round_trip),
    ]


def run(faults: Iterable[str] = ()) -> list[CheckResult]:
    results = []
    for name, fn in checks(faults):
        start = time.perf_counter()
        try:
            detail, ok = fn(), True
        except AssertionError as exc:
            detail, ok = str(exc), False
        results.append(CheckResult(name, ok, time.perf_counter() - start, detail))
    return results

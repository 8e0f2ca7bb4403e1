import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framesynth import io as fio
from framesynth import metrics
from framesynth.autodiff import ContractError
from oracles import epe_oracle, psnr_oracle, ssim_oracle


def test_psnr_examples():
    a = np.random.default_rng(0).uniform(0, 200, (3, 8, 8))
    assert metrics.psnr(a, a) == math.inf
    assert metrics.psnr(a, a + 16) == pytest.approx(10 * math.log10(65025 / 256), abs=1e-9)
    assert metrics.psnr(a, a + 16) == pytest.approx(24.048, abs=1e-3)
    z = np.zeros((1, 4, 4))
    assert metrics.psnr(z, z + 255) == 0.0


def test_psnr_shape_mismatch():
    with pytest.raises(ContractError):
        metrics.psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def test_ssim_identity_and_oracle():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 255, (3, 20, 24))
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    b = np.clip(a + 20, 0, 255)
    s = metrics.ssim(a, b)
    assert s < 1
    assert s == pytest.approx(ssim_oracle(a, b), abs=1e-6)


def test_ssim_inverted_image_is_nonpositive():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 255, (1, 16, 16))
    s = metrics.ssim(a, 255 - a)
    assert s == pytest.approx(ssim_oracle(a, 255 - a), abs=1e-6)
    assert s <= 0


def test_ssim_window_contract():
    with pytest.raises(ContractError):
        metrics.ssim(np.zeros((1, 10, 30)), np.zeros((1, 10, 30)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_ssim_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 255, (2, 3, 14, 15))
    assert abs(metrics.ssim(a, b) - metrics.ssim(b, a)) <= 1e-12


def test_interpolation_error():
    a = np.random.default_rng(3).uniform(0, 200, (3, 6, 6))
    assert metrics.interpolation_error(a, a) == 0
    assert metrics.interpolation_error(a, a + 10) == 10.0
    b = a.copy()
    b[:, :3] += 10
    mask = np.zeros((6, 6), bool)
    mask[:3] = True
    assert metrics.interpolation_error(b, a, mask) == 10.0
    with pytest.raises(ContractError):
        metrics.interpolation_error(a, b, np.zeros((6, 6)))


def test_epe():
    rng = np.random.default_rng(4)
    g = rng.normal(size=(2, 5, 6))
    assert metrics.epe(g, g) == 0
    p = g.copy()
    p[0] += 3
    p[1] += 4
    assert metrics.epe(p, g) == pytest.approx(5.0, abs=1e-12)
    q = rng.normal(size=(2, 5, 6))
    assert metrics.epe(q, g) == pytest.approx(epe_oracle(q, g), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_ie_squared_is_summed_error(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 255, (2, 3, 5, 7))
    ie = metrics.interpolation_error(a, b)
    assert ie ** 2 * a.size == pytest.approx(((a - b) ** 2).sum(), rel=1e-12)
    assert metrics.psnr(a, b) == pytest.approx(psnr_oracle(a, b), abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_metrics_flip_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 255, (2, 3, 12, 13))
    fa, fb = fio.hflip(a), fio.hflip(b)
    assert metrics.psnr(fa, fb) == pytest.approx(metrics.psnr(a, b), rel=1e-12)
    assert metrics.ssim(fa, fb) == pytest.approx(metrics.ssim(a, b), rel=1e-9)
    assert metrics.interpolation_error(fa, fb) == pytest.approx(metrics.interpolation_error(a, b), rel=1e-12)
    f, g = rng.normal(size=(2, 2, 4, 5))
    assert metrics.epe(fio.hflip(f), fio.hflip(g)) == pytest.approx(metrics.epe(f, g), rel=1e-12)


def test_psnr_decreases_with_mse():
    a = np.zeros((1, 4, 4))
    vals = [metrics.psnr(a, a + d) for d in (1, 2, 4, 8)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_per_timestep_report():
    rng = np.random.default_rng(5)
    frames = {k / 8: rng.uniform(0, 255, (3, 16, 16)) for k in range(1, 8)}
    rows = metrics.per_timestep_report(frames, frames)
    assert len(rows) == 8 and rows[-1].t == "mean"
    assert all(r.psnr == math.inf and r.ssim == pytest.approx(1.0) and r.ie == 0 for r in rows)
    text = metrics.report_csv(rows)
    lines = text.strip().splitlines()
    assert lines[0] == "t,psnr,ssim,ie"
    assert lines[1].split(",")[1] == "99.000000"
    assert lines[-1].startswith("mean,")

    one = {0.5: frames[0.5]}
    rows = metrics.per_timestep_report(one, {0.5: frames[0.5] + 1})
    assert len(rows) == 2 and rows[0].psnr == rows[1].psnr
    with pytest.raises(ContractError):
        metrics.per_timestep_report(one, {0.25: frames[0.5]})

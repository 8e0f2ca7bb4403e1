import numpy as np
import pytest

from framesynth import autodiff as ad
from framesynth import networks as nets
from framesynth.autodiff import ContractError, leaf, precision
from framesynth.gradcheck import check_gradients
from framesynth.layers import ConvLayer, avg_pool2, bilinear_upsample2, conv2d
from framesynth.networks import (UNetConfig, build_unet, flow_computation_config, flow_interpolation_config,
                                 load_params, parameter_count, run_flow_computation, run_flow_interpolation,
                                 save_params, unet_forward)


def test_conv_hand_count():
    x = leaf(np.ones((1, 1, 3, 3)))
    layer = ConvLayer(leaf(np.ones((1, 1, 3, 3))), leaf(np.zeros(1)))
    out = conv2d(x, layer).value[0, 0]
    assert out[1, 1] == 9 and out[0, 0] == 4 and out[0, 1] == 6


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 5, 5))
    b = rng.standard_normal(4)
    with precision(np.float64):
        out = conv2d(leaf(x), ConvLayer(leaf(w), leaf(b))).value
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(6):
                for j in range(5):
                    ref[n, o, i, j] = (xp[n, :, i:i + 5, j:j + 5] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-10)


def test_leaky_relu_and_pool():
    assert float(ad.leaky_relu(leaf(-10.0), 0.1).value) == pytest.approx(-1.0)
    assert float(ad.leaky_relu(leaf(10.0), 0.1).value) == 10.0
    assert avg_pool2(leaf([[[[1.0, 2.0], [3.0, 4.0]]]])).value.item() == 2.5


def test_upsample_shape_and_convention():
    x = leaf(np.array([[[[0.0, 4.0]]]]))
    out = bilinear_upsample2(x).value[0, 0]
    assert out.shape == (2, 4)
    # sources at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
    np.testing.assert_allclose(out[0], [0.0, 1.0, 3.0, 4.0])


def test_layer_contracts():
    with pytest.raises(ContractError):
        conv2d(leaf(np.zeros((1, 2, 4, 4))), ConvLayer(leaf(np.zeros((1, 3, 3, 3))), leaf(np.zeros(1))))
    with pytest.raises(ContractError):
        ConvLayer(leaf(np.zeros((1, 3, 4, 4))), leaf(np.zeros(1)))
    with pytest.raises(ContractError):
        avg_pool2(leaf(np.zeros((1, 1, 3, 4))))


LAYERS = {
    "conv3": lambda rng: (lambda x, w=leaf(rng.standard_normal((3, 2, 3, 3))), b=leaf(rng.standard_normal(3)):
                          conv2d(x, ConvLayer(w, b))),
    "conv7": lambda rng: (lambda x, w=leaf(rng.standard_normal((2, 2, 7, 7))), b=leaf(rng.standard_normal(2)):
                          conv2d(x, ConvLayer(w, b))),
    "leaky_relu": lambda rng: (lambda x: ad.leaky_relu(x, 0.1)),
    "avg_pool2": lambda rng: avg_pool2,
    "upsample2": lambda rng: bilinear_upsample2,
}


@pytest.mark.parametrize("name", sorted(LAYERS))
def test_layer_gradients(name):
    rng = np.random.default_rng(1)
    with precision(np.float64):
        op = LAYERS[name](rng)
        x = leaf(rng.uniform(0.1, 1.0, (1, 2, 8, 8)) * rng.choice([-1, 1], (1, 2, 8, 8)))
        extra = list(op.__defaults__ or ())
        y0 = op(x)
        w = rng.standard_normal(y0.shape)
        f = lambda: ad.total(ad.mul(op(x), w))
        assert check_gradients(f, [x] + extra) < 1e-4


def test_config_invariants():
    cfg = flow_computation_config()
    assert cfg.encoder_levels == 6 and cfg.decoder_levels == 5
    assert cfg.kernels == (7, 5, 3, 3, 3, 3)
    assert cfg.slope == 0.1
    assert flow_computation_config(0.25).widths == (8, 16, 32, 64, 128, 128)
    with pytest.raises(ContractError):
        UNetConfig(6, 4, widths=(8, 8), kernels=(4, 3))
    with pytest.raises(ContractError):
        UNetConfig(6, 4, widths=(8, 0), kernels=(3, 3))


@pytest.mark.parametrize("cfg", [flow_computation_config(), flow_interpolation_config(),
                                 flow_computation_config(0.25), flow_interpolation_config(0.125, cross_link=False),
                                 UNetConfig(3, 2, (4, 6, 5), (7, 3, 5))])
def test_parameter_count_formula(cfg):
    params = build_unet(cfg, np.random.default_rng(0))
    assert params.size() == parameter_count(cfg)


def test_flow_computation_shapes():
    cfg = flow_computation_config(0.125)
    params = build_unet(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    i0 = rng.uniform(0, 255, (1, 3, 64, 64)).astype(np.float32)
    i1 = rng.uniform(0, 255, (1, 3, 64, 64)).astype(np.float32)
    f01, f10 = run_flow_computation(params, i0, i1)
    assert f01.shape == (1, 2, 64, 64) and f10.shape == (1, 2, 64, 64)
    assert np.all(np.isfinite(f01.value)) and np.abs(f01.value).max() < 100
    with pytest.raises(ContractError, match="multiples of 32"):
        run_flow_computation(params, i0[..., :48], i1[..., :48])


def test_flow_interpolation_shapes():
    wf = 0.125
    flow = build_unet(flow_computation_config(wf), np.random.default_rng(0))
    interp = build_unet(flow_interpolation_config(wf), np.random.default_rng(1))
    rng = np.random.default_rng(2)
    img = lambda: rng.uniform(0, 255, (1, 3, 64, 64)).astype(np.float32)
    fl = lambda: rng.normal(0, 1, (1, 2, 64, 64)).astype(np.float32)
    i0, i1 = img(), img()
    _, _, feats = run_flow_computation(flow, i0, i1, return_features=True)
    d0, d1, logit = run_flow_interpolation(interp, i0, i1, fl(), fl(), fl(), fl(), img(), img(), feats)
    assert d0.shape == d1.shape == (1, 2, 64, 64) and logit.shape == (1, 1, 64, 64)
    with pytest.raises(ContractError):
        run_flow_interpolation(interp, i0, i1, fl(), fl(), fl(), fl(), img(), img(), None)
    with pytest.raises(ContractError):
        unet_forward(interp, ad.const(np.zeros((1, 19, 64, 64))), feats)


def test_translation_consistency_two_level():
    # pooling makes shifts equivariant only in multiples of 2**(levels-1)
    cfg = UNetConfig(2, 2, (3, 4), (3, 3))
    params = build_unet(cfg, np.random.default_rng(0), np.float64)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 48, 48))
    shifted = np.roll(x, 2, axis=3)
    with precision(np.float64):
        a, _ = unet_forward(params, ad.const(x))
        b, _ = unet_forward(params, ad.const(shifted))
    # receptive-field radius of this net is under 16 px
    np.testing.assert_allclose(b.value[..., 20:28, 20:28], a.value[..., 20:28, 18:26], atol=1e-12)


def test_unet_parameter_gradients():
    cfg = UNetConfig(3, 2, (2, 3), (5, 3))
    rng = np.random.default_rng(3)
    with precision(np.float64):
        params = build_unet(cfg, rng, np.float64)
        x = ad.const(rng.standard_normal((1, 3, 8, 8)))
        w = rng.standard_normal((1, 2, 8, 8))
        f = lambda: ad.total(ad.mul(unet_forward(params, x)[0], w))
        assert check_gradients(f, params.nodes(), max_coords=12) < 1e-4


def test_save_load_round_trip(tmp_path):
    params = build_unet(flow_interpolation_config(0.125), np.random.default_rng(0))
    save_params(params, tmp_path / "a.ckpt")
    back = load_params(tmp_path / "a.ckpt")
    assert back.config == params.config
    for (n1, a), (n2, b) in zip(params, back):
        assert n1 == n2 and a.value.tobytes() == b.value.tobytes()
    save_params(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_truncated_checkpoint(tmp_path):
    params = build_unet(flow_computation_config(0.125), np.random.default_rng(0))
    save_params(params, tmp_path / "a.ckpt")
    raw = (tmp_path / "a.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(raw[:-100])
    with pytest.raises(OSError):
        load_params(tmp_path / "t.ckpt")


def test_config_mismatch_names_tensor(tmp_path):
    params = build_unet(flow_computation_config(0.125), np.random.default_rng(0))
    save_params(params, tmp_path / "a.ckpt")
    with pytest.raises(ValueError, match="enc0.conv0.weight"):
        load_params(tmp_path / "a.ckpt", expected=flow_computation_config(0.25))


def test_params_are_time_independent():
    from framesynth.model import Interpolator
    m = Interpolator.create(0.125)
    shapes = {k: v.shape for k, v in m.parameters().items()}
    before = {k: v.value.copy() for k, v in m.parameters().items()}
    rng = np.random.default_rng(0)
    i0 = rng.uniform(0, 255, (1, 3, 32, 32)).astype(np.float32)
    m.forward(i0, i0, [0.1, 0.5, 0.9])
    assert shapes == {k: v.shape for k, v in m.parameters().items()}
    assert all(np.array_equal(before[k], v.value) for k, v in m.parameters().items())

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framesynth import io as fio
from framesynth.autodiff import ContractError
from framesynth.data import (Augmentation, SyntheticDataset, load_clip_tree, make_training_sample, random_scene,
                             sample_times, split_clip, translating_square_scene)
from framesynth.warp import backward_warp


def _interior_err(a, b, m=6):
    return float(np.abs(a[..., m:-m, m:-m] - b[..., m:-m, m:-m]).mean())


def test_sample_times():
    assert sample_times(1) == [0.5]
    assert sample_times(7) == [k / 8 for k in range(1, 8)]


def test_scene_is_deterministic():
    a = random_scene(np.random.default_rng(3), n_objects=2)
    b = random_scene(np.random.default_rng(3), n_objects=2)
    assert a.frame(0.3).tobytes() == b.frame(0.3).tobytes()
    f = a.frame(0.0)
    assert f.shape == (3, 64, 64) and f.dtype == np.float32
    assert f.min() >= 0 and f.max() <= 255


def test_true_flow_warps_frames():
    sc = random_scene(np.random.default_rng(4), max_speed=3.0)
    f0, f1 = sc.frame(0.0)[None], sc.frame(1.0)[None]
    warped = backward_warp(f1, sc.flow_01()[None]).value
    # bilinear resampling of a band-limited texture: small but nonzero error
    assert _interior_err(warped, f0) < 2.0
    assert _interior_err(f1, f0) > 5 * _interior_err(warped, f0)
    ft0, ft1 = sc.intermediate_flows(0.5)
    mid = sc.frame(0.5)[None]
    assert _interior_err(backward_warp(f0, ft0[None]).value, mid) < 2.0
    assert _interior_err(backward_warp(f1, ft1[None]).value, mid) < 2.0


def test_flow_endpoint_relations():
    sc = random_scene(np.random.default_rng(5))
    np.testing.assert_allclose(sc.flow_10(), -sc.flow_01())
    ft0, ft1 = sc.intermediate_flows(0.0)
    np.testing.assert_array_equal(ft0, 0.0)
    np.testing.assert_allclose(ft1, sc.flow_01())


def test_square_visibility():
    sc = translating_square_scene()
    v = sc.visibility(0.5)
    assert set(np.unique(v)) <= {0.0, 0.5, 1.0}
    # the square moves right and up: background ahead of it is visible only in frame 0
    assert (v == 1.0).any() and (v == 0.0).any()
    assert sc.occlusion_mask().any()


def test_split_clip():
    frames = list(range(30))
    clips = split_clip(frames, 12)
    assert clips == [list(range(12)), list(range(12, 24))]
    assert split_clip(frames[:5], 12) == []


def test_load_clip_tree(tmp_path):
    rng = np.random.default_rng(0)
    for video in ("a", "b"):
        (tmp_path / video).mkdir()
        for k in range(13):
            fio.write_image(rng.uniform(0, 255, (3, 8, 8)), tmp_path / video / f"{k:03d}.png")
    clips = load_clip_tree(tmp_path, 12)
    assert len(clips) == 2 and all(len(c) == 12 for c in clips)
    assert clips[0][0].shape == (3, 8, 8)


def test_sample_contract():
    with pytest.raises(ContractError):
        make_training_sample([np.zeros((3, 4, 4))] * 5, np.random.default_rng(0), 7)


def test_sample_without_augmentation_keeps_order():
    frames = [np.full((3, 4, 4), k, np.float32) for k in range(9)]
    s = make_training_sample(frames, np.random.default_rng(0), 7, Augmentation(flip=False, reverse=False))
    assert s.i0[0, 0, 0] == 0 and s.i1[0, 0, 0] == 8
    assert [t[0, 0, 0] for t in s.targets] == list(range(1, 8))
    assert s.ts == sample_times(7)


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_augmentation_keeps_frames_and_flows_consistent(seed):
    rng = np.random.default_rng(seed)
    sc = random_scene(rng, 48, 64, max_speed=3.0)
    clip = sc.frames(9)
    aug = Augmentation(crop_size=32, resize_shorter=40, flip=True, reverse=True)
    s = make_training_sample(clip, rng, 7, aug, flows=(sc.flow_01(), sc.flow_10()))
    assert s.i0.shape == (3, 32, 32) and len(s.targets) == 7
    warped = backward_warp(s.i1[None], s.f01[None]).value[0]
    assert _interior_err(warped, s.i0) < 0.25 * max(_interior_err(s.i1, s.i0), 4.0)
    back = backward_warp(s.i0[None], s.f10[None]).value[0]
    assert _interior_err(back, s.i1) < 0.25 * max(_interior_err(s.i1, s.i0), 4.0)


def test_reversal_swaps_roles():
    frames = [np.full((3, 4, 4), k, np.float32) for k in range(9)]
    f01, f10 = np.ones((2, 4, 4)), -np.ones((2, 4, 4))
    for seed in range(20):
        s = make_training_sample(frames, np.random.default_rng(seed), 7, Augmentation(flip=False), (f01, f10))
        if s.reversed:
            assert s.i0[0, 0, 0] == 8 and s.f01[0, 0, 0] == -1
            break
    else:
        pytest.fail("no reversed sample in 20 draws")


def test_dataset_is_deterministic_and_cached():
    ds = SyntheticDataset(4, 9, size=32, seed=1)
    assert len(ds) == 4
    assert ds[2] is ds[2]
    other = SyntheticDataset(4, 9, size=32, seed=1)
    assert other[2][5].tobytes() == ds[2][5].tobytes()
    assert ds.with_seed(2)[2][0].tobytes() != ds[2][0].tobytes()

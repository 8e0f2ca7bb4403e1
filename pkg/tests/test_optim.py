import math

import numpy as np
import pytest

from framesynth.autodiff import ContractError, leaf, precision
from framesynth.optim import AdamState, adam_step, lr_schedule


def test_schedule():
    assert lr_schedule(0) == 1e-4
    assert lr_schedule(199) == 1e-4
    assert lr_schedule(200) == pytest.approx(1e-5)
    assert lr_schedule(399) == pytest.approx(1e-5)
    assert lr_schedule(400) == pytest.approx(1e-6)
    assert lr_schedule(50, base_lr=1e-3, decay=2.0, every=10) == pytest.approx(1e-3 / 32)
    with pytest.raises(ContractError):
        lr_schedule(-1)


def test_first_step_moves_by_lr():
    # bias correction makes the first update lr * sign(g)
    with precision(np.float64):
        p = {"w": leaf(np.array([1.0, -2.0, 3.0]))}
    state = AdamState()
    adam_step(p, {"w": np.array([0.5, -4.0, 1e-3])}, state, lr=0.1)
    np.testing.assert_allclose(p["w"].value, [0.9, -1.9, 2.9], atol=1e-6)
    assert state.step == 1


def test_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    with precision(np.float64):
        p = {"w": leaf(rng.standard_normal(5))}
    ref = p["w"].value.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    state = AdamState()
    for step in range(1, 6):
        g = rng.standard_normal(5)
        adam_step(p, {"w": g}, state, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** step)) / (np.sqrt(v / (1 - 0.999 ** step)) + 1e-8)
    np.testing.assert_allclose(p["w"].value, ref, rtol=1e-12)


def test_zero_gradient_leaves_params():
    p = {"w": leaf(np.ones(4, np.float32))}
    adam_step(p, {"w": np.zeros(4, np.float32)}, AdamState(), lr=1.0)
    np.testing.assert_array_equal(p["w"].value, 1.0)


def test_shape_contracts():
    p = {"w": leaf(np.ones(4))}
    state = AdamState()
    with pytest.raises(ContractError):
        adam_step(p, {"w": np.ones(3)}, state, lr=0.1)
    adam_step(p, {"w": np.ones(4)}, state, lr=0.1)
    p["w"] = leaf(np.ones(5))
    with pytest.raises(ContractError):
        adam_step(p, {"w": np.ones(5)}, state, lr=0.1)


def test_converges_on_quadratic():
    with precision(np.float64):
        p = {"w": leaf(np.array([5.0, -3.0]))}
    state = AdamState()
    for _ in range(2000):
        adam_step(p, {"w": 2 * p["w"].value}, state, lr=0.05)
    assert math.hypot(*p["w"].value) < 1e-2

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framesynth import autodiff as ad
from framesynth.autodiff import ContractError, backward, leaf, precision
from framesynth.gradcheck import check_gradients


def test_sum_gradient_is_ones():
    x = leaf(np.arange(4.0).reshape(2, 2))
    backward(ad.total(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_square_gradient():
    x = leaf([[1.0, 2.0], [3.0, 4.0]])
    backward(ad.total(ad.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [[2, 4], [6, 8]])


def test_non_scalar_loss_rejected():
    x = leaf(np.ones((2, 2)))
    with pytest.raises(ContractError):
        backward(ad.mul(x, x))


def test_repeated_backward_accumulates():
    x = leaf([1.0, 2.0])
    loss = ad.total(ad.square(x))
    backward(loss)
    backward(loss)
    np.testing.assert_array_equal(x.grad, [4.0, 8.0])
    x.zero_grad()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_unreachable_leaf_keeps_zero_grad():
    x, y = leaf([1.0]), leaf([2.0])
    backward(ad.total(ad.scale(x, 3.0)))
    np.testing.assert_array_equal(y.grad, [0.0])
    assert y.grad.shape == y.shape


def test_elementwise_examples():
    assert list(ad.mul(leaf([2.0, 3.0]), leaf([4.0, 5.0])).value) == [8.0, 15.0]
    assert float(ad.sigmoid(leaf(0.0)).value) == 0.5
    c = ad.concat([leaf(np.zeros((1, 3, 4, 5))), leaf(np.zeros((1, 2, 4, 5)))])
    assert c.shape == (1, 5, 4, 5)


def test_shape_mismatch_errors():
    with pytest.raises(ContractError):
        ad.add(leaf(np.ones(3)), leaf(np.ones(4)))
    with pytest.raises(ContractError):
        ad.concat([leaf(np.zeros((1, 3, 4, 5))), leaf(np.zeros((1, 2, 4, 6)))])


def test_default_precision_is_32_bit():
    assert leaf([1.0]).dtype == np.float32
    with precision(np.float64):
        assert leaf([1.0]).dtype == np.float64
    assert leaf([1.0]).dtype == np.float32


def test_sigmoid_saturates_without_overflow():
    v = ad.sigmoid(leaf([-1000.0, 1000.0])).value
    np.testing.assert_array_equal(v, [0.0, 1.0])


UNARY = {
    "abs": lambda x: ad.absolute(x),
    "sqrt": lambda x: ad.sqrt(ad.add(ad.square(x), 1.0)),
    "sigmoid": ad.sigmoid,
    "square": ad.square,
    "scale": lambda x: ad.scale(x, -2.5),
    "leaky_relu": lambda x: ad.leaky_relu(x, 0.1),
    "mean": ad.mean,
    "channels": lambda x: ad.channels(x, 1, 3),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    rng = np.random.default_rng(3)
    with precision(np.float64):
        # keep away from the kinks of abs / leaky relu
        v = rng.uniform(0.2, 1.0, size=(2, 3, 4, 4)) * rng.choice([-1, 1], size=(2, 3, 4, 4))
        x = leaf(v)
        w = rng.standard_normal((2, 3, 4, 4))
        op = UNARY[name]

        def f():
            y = op(x)
            return ad.total(ad.mul(y, w[tuple(slice(0, s) for s in y.shape)]))

        assert check_gradients(f, [x]) < 1e-4


@pytest.mark.parametrize("name", ["add", "sub", "mul", "div", "concat", "add_n"])
def test_binary_gradients(name):
    rng = np.random.default_rng(4)
    with precision(np.float64):
        a = leaf(rng.standard_normal((2, 3, 4, 4)))
        b = leaf(rng.uniform(0.5, 2.0, size=(2, 1, 4, 4)))  # broadcast along channels
        ops = {
            "add": lambda: ad.add(a, b), "sub": lambda: ad.sub(a, b), "mul": lambda: ad.mul(a, b),
            "div": lambda: ad.div(a, b), "concat": lambda: ad.concat([a, b]),
            "add_n": lambda: ad.add_n([a, b, a]),
        }
        w = rng.standard_normal((2, 4, 4, 4))

        def f():
            y = ops[name]()
            return ad.total(ad.mul(y, w[:, :y.shape[1]]))

        assert check_gradients(f, [a, b]) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_linearity_of_backward(seed):
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        x = leaf(rng.standard_normal((3, 3)))
        w1, w2 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        l1 = lambda: ad.total(ad.mul(ad.square(x), w1))
        l2 = lambda: ad.total(ad.mul(ad.sigmoid(x), w2))
        backward(l1())
        g1 = x.grad.copy()
        x.zero_grad()
        backward(l2())
        g2 = x.grad.copy()
        x.zero_grad()
        backward(ad.add(l1(), l2()))
        np.testing.assert_allclose(x.grad, g1 + g2, rtol=1e-12, atol=1e-12)


def test_forward_is_deterministic():
    def run():
        rng = np.random.default_rng(7)
        x = leaf(rng.standard_normal((1, 3, 8, 8)))
        return ad.sigmoid(ad.mul(x, x)).value

    assert run().tobytes() == run().tobytes()


def test_tensor_record_round_trip():
    value = np.arange(24, dtype=np.float32).reshape(2, 3, 4) / 7
    buf = io.BytesIO()
    ad.write_tensor(buf, "enc0.conv0.weight", value)
    raw = buf.getvalue()
    # name length, name, rank, extents, data
    assert raw[:4] == (17).to_bytes(4, "little")
    assert len(raw) == 4 + 17 + 4 + 12 + 24 * 4
    buf.seek(0)
    name, back = ad.read_tensor(buf)
    assert name == "enc0.conv0.weight"
    assert back.tobytes() == value.tobytes()


def test_truncated_tensor_record():
    buf = io.BytesIO()
    ad.write_tensor(buf, "x", np.ones((4,), np.float32))
    with pytest.raises(OSError):
        ad.read_tensor(io.BytesIO(buf.getvalue()[:-3]))

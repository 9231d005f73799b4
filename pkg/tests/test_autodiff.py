import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rocksr import autodiff as ad
from rocksr.autodiff import Parameter, ShapeError, Tape, Tensor


def test_mean_of_square_gradient():
    x = Tensor(np.array([1.0, -2.0, 3.0], dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        loss = ad.mean(ad.square(x))
        tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data / 3, rtol=1e-12)
    assert loss.item() == pytest.approx((1 + 4 + 9) / 3)


def test_fanout_accumulates():
    # y = x*x + x uses x three times; grad = 2x + 1
    x = Tensor(np.array([0.5, -1.5], dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        y = ad.mean(ad.add(ad.mul(x, x), x))
        tape.backward(y)
    np.testing.assert_allclose(x.grad, (2 * x.data + 1) / 2, rtol=1e-12)


def test_scalar_operand_folds_as_constant():
    x = Tensor(np.array([2.0, 4.0], dtype=np.float32), requires_grad=True)
    with Tape() as tape:
        y = ad.mean(ad.mul(ad.add(x, 1.0), 3.0))
        tape.backward(y)
    np.testing.assert_allclose(y.data, ((x.data + 1) * 3).mean(), rtol=1e-6)
    np.testing.assert_allclose(x.grad, np.full(2, 1.5, dtype=np.float32))


def test_operator_sugar_matches_functions():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        y = ad.mean(2.0 * x - (-x) + 1.0)
        tape.backward(y)
    np.testing.assert_allclose(x.grad, np.full(2, 1.5, dtype=np.float32))


def test_parameter_grad_accumulates_across_backwards():
    p = Parameter(np.array([1.0, 2.0], dtype=np.float64), name="p")
    for _ in range(2):
        with Tape() as tape:
            tape.backward(ad.mean(p))
    np.testing.assert_allclose(p.grad, np.full(2, 1.0))
    p.zero_grad()
    assert not p.grad.any()


def test_detach_blocks_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        y = ad.mean(ad.mul(x.detach(), x))
        tape.backward(y)
    np.testing.assert_allclose(x.grad, [3.0])  # only the tracked factor


def test_no_tape_means_no_tracking():
    x = Tensor(np.array([1.0]), requires_grad=True)
    y = ad.square(x)
    assert not y.requires_grad
    assert x.grad is None


def test_backward_rejects_nonscalar():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Tape() as tape:
        y = ad.square(x)
        with pytest.raises(ShapeError):
            tape.backward(y)


def test_shape_and_dtype_mismatch_raise():
    a = Tensor(np.zeros(3, dtype=np.float32))
    with pytest.raises(ShapeError):
        ad.add(a, Tensor(np.zeros(4, dtype=np.float32)))
    with pytest.raises(ShapeError):
        ad.add(a, Tensor(np.zeros(3), dtype=np.float64))


def test_int_input_promotes_to_float32():
    t = Tensor([1, 2, 3])
    assert t.dtype == np.float32


def test_log_abs_clamp_gradients():
    x = Tensor(np.array([0.5, 2.0, -3.0], dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        y = ad.mean(ad.log(ad.clamp(ad.absolute(x), 1.0, 2.5)))
        tape.backward(y)
    # |x| clamps to [1, 2.5]: 0.5 -> rail, 2.0 -> 1/2, -3.0 -> rail
    np.testing.assert_allclose(x.grad, [0.0, 1 / (2.0 * 3), 0.0], rtol=1e-12)


def test_clamp_keeps_gradient_inside_range():
    x = Tensor(np.array([0.0, 0.99, -0.99], dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        tape.backward(ad.mean(ad.clamp(x, -1.0, 1.0)))
    np.testing.assert_allclose(x.grad, np.full(3, 1 / 3))


def test_reshape_roundtrip_gradient():
    x = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        y = ad.reshape(x, (3, 2))
        tape.backward(ad.mean(ad.square(y)))
    np.testing.assert_allclose(x.grad, 2 * x.data / 6)


def test_nested_tapes_keep_outer_recording():
    x = Tensor(np.array([2.0], dtype=np.float64), requires_grad=True)
    with Tape() as outer:
        y = ad.square(x)
        with Tape() as inner:
            z = ad.square(x)
            inner.backward(ad.mean(z))
        inner_grad = x.grad.copy()
        x.grad = None
        outer.backward(ad.mean(y))
    np.testing.assert_allclose(inner_grad, [4.0])
    np.testing.assert_allclose(x.grad, [4.0])
    assert len(outer) == 2  # outer never saw inner's op


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20))
@settings(deadline=None)
def test_mean_grad_is_uniform(values):
    x = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        tape.backward(ad.mean(x))
    np.testing.assert_allclose(x.grad, np.full(len(values), 1 / len(values)), rtol=1e-12)


@given(
    st.lists(st.floats(-10, 10), min_size=2, max_size=16),
    st.floats(-5, 5),
)
@settings(deadline=None)
def test_add_mul_linearity(values, c):
    x = np.array(values, dtype=np.float64)
    t = Tensor(x, requires_grad=True)
    with Tape() as tape:
        tape.backward(ad.mean(ad.mul(t, c)))
    np.testing.assert_allclose(t.grad, np.full(len(values), c / len(values)), atol=1e-12)

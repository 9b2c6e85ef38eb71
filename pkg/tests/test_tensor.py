import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agos.tensor import (
    ConvKernel, NonFiniteError, Tape, TapeError, Tensor, abs_diff, add, conv1x1, conv2d, cross_entropy,
    dropout, finite_diff_grad, global_avg_pool, parameter, relu, scale, softmax, sum_squares, tensor_sum,
)
from oracles import direct_softmax, naive_conv2d, per_position_affine

UNIFORM3_CE = 0.6365141682948128  # (1/3)(log 3 + 2 log 3/2)


def kernel(w, b, d=1, grad=False):
    mk = parameter if grad else (lambda a, name=None: Tensor(a))
    return ConvKernel(mk(np.asarray(w, dtype=np.float64), "w"), mk(np.asarray(b, dtype=np.float64), "b"), d)


def grad_of(fn, *tensors):
    with Tape() as tape:
        loss = fn()
    tape.backward(loss, tensors)
    return [t.grad for t in tensors]


def numeric_rel_err(a, n):
    return np.abs(a - n).max() / max(np.abs(n).max(), np.abs(a).max(), 1e-12)


# ------------------------------------------------------------------ conv2d

@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_conv2d_identity_kernel(d):
    x = Tensor(np.random.default_rng(0).standard_normal((2, 7, 6, 3)))
    w = np.zeros((3, 3, 3, 3))
    w[1, 1] = np.eye(3)
    out = conv2d(x, kernel(w, np.zeros(3), d))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_impulse_footprint():
    x = np.zeros((1, 15, 15, 1))
    x[0, 7, 7, 0] = 1.0
    out = conv2d(Tensor(x), kernel(np.ones((3, 3, 1, 1)), [0.0], 3)).data[0, :, :, 0]
    ref = naive_conv2d(x, np.ones((3, 3, 1, 1)), [0.0], 3)[0, :, :, 0]
    np.testing.assert_array_equal(out, ref)
    ys, xs = np.nonzero(out)
    assert (ys.max() - ys.min() + 1, xs.max() - xs.min() + 1) == (7, 7)


def test_conv2d_matches_naive_dilation2():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 6, 6, 2))
    w = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3)
    out = conv2d(Tensor(x), kernel(w, b, 2))
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, 2), rtol=0, atol=1e-12)


def test_conv2d_stride2_matches_naive():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 8, 8, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    out = conv2d(Tensor(x), kernel(w, b), stride=2)
    assert out.shape == (2, 4, 4, 4)
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, 1, 2), atol=1e-12)


def test_conv2d_errors():
    x = Tensor(np.zeros((1, 4, 4, 2)))
    with pytest.raises(ValueError):
        conv2d(x, kernel(np.zeros((3, 3, 3, 1)), [0.0]))
    bad = np.zeros((1, 4, 4, 2))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        conv2d(Tensor(bad), kernel(np.zeros((3, 3, 2, 1)), [0.0]))
    with pytest.raises(NonFiniteError):
        conv2d(x, kernel(np.full((3, 3, 2, 1), np.inf), [0.0]))


@pytest.mark.parametrize("d,stride", [(1, 1), (3, 1), (1, 2)])
def test_conv2d_gradients(d, stride):
    rng = np.random.default_rng(3)
    x = parameter(rng.standard_normal((2, 6, 6, 2)), "x")
    k = kernel(rng.standard_normal((3, 3, 2, 3)), rng.standard_normal(3), d, grad=True)
    weights = rng.standard_normal((2, 6 // stride, 6 // stride, 3))
    f = lambda: tensor_sum(scale(conv2d(x, k, stride), weights))  # noqa: E731
    grads = grad_of(f, x, k.weight, k.bias)
    for t, g in zip((x, k.weight, k.bias), grads):
        n = finite_diff_grad(lambda: float(f().data), t)
        assert numeric_rel_err(g, n) <= 1e-5


# ----------------------------------------------------------------- conv1x1

def test_conv1x1_zero_weights_gives_bias():
    x = Tensor(np.random.default_rng(4).standard_normal((2, 3, 3, 4)))
    out = conv1x1(x, kernel(np.zeros((1, 1, 4, 2)), [0.5, -1.0]))
    np.testing.assert_array_equal(out.data, np.broadcast_to([0.5, -1.0], (2, 3, 3, 2)))


def test_conv1x1_identity():
    x = Tensor(np.random.default_rng(5).standard_normal((1, 4, 4, 3)))
    out = conv1x1(x, kernel(np.eye(3).reshape(1, 1, 3, 3), np.zeros(3)))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv1x1_matches_affine_oracle():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 4, 4, 3))
    w = rng.standard_normal((1, 1, 3, 5))
    b = rng.standard_normal(5)
    np.testing.assert_allclose(conv1x1(Tensor(x), kernel(w, b)).data, per_position_affine(x, w, b), atol=1e-12)


def test_conv1x1_rejects_mismatch():
    with pytest.raises(ValueError):
        conv1x1(Tensor(np.zeros((1, 2, 2, 3))), kernel(np.zeros((1, 1, 4, 2)), np.zeros(2)))
    with pytest.raises(ValueError):
        conv1x1(Tensor(np.zeros((1, 2, 2, 3))), kernel(np.zeros((3, 3, 3, 2)), np.zeros(2)))


# ---------------------------------------------------------------- abs_diff

def test_abs_diff_values():
    x = Tensor(np.random.default_rng(7).standard_normal((1, 2, 2, 2)))
    assert not abs_diff(x, x).data.any()
    np.testing.assert_array_equal(abs_diff(Tensor([1.0, -2.0]), Tensor([-1.0, 1.0])).data, [2.0, 3.0])
    with pytest.raises(ValueError):
        abs_diff(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


def test_abs_diff_gradient_matches_fd():
    rng = np.random.default_rng(8)
    a = parameter(rng.standard_normal((1, 3, 3, 2)), "a")
    b = Tensor(rng.standard_normal((1, 3, 3, 2)))
    f = lambda: tensor_sum(abs_diff(a, b))  # noqa: E731
    (g,) = grad_of(f, a)
    n = finite_diff_grad(lambda: float(f().data), a)
    np.testing.assert_allclose(g, n, atol=1e-6)


def test_abs_diff_tie_subgradient_is_zero():
    x = parameter(np.random.default_rng(9).standard_normal((1, 2, 2, 1)), "x")
    (g,) = grad_of(lambda: tensor_sum(abs_diff(x, x)), x)
    assert not g.any()


# ------------------------------------------------------------------ GAP

def test_gap_values():
    c = Tensor(np.full((2, 3, 4, 2), 1.75))
    np.testing.assert_array_equal(global_avg_pool(c).data, np.full((2, 1, 1, 2), 1.75))
    m = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 2, 2, 1))
    assert global_avg_pool(m).data.item() == 2.5
    with pytest.raises(ValueError):
        global_avg_pool(Tensor(np.zeros((1, 0, 3, 2))))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_gap_permutation_invariance(seed, h, w):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, h, w, 3))
    perm = rng.permutation(h * w)
    xp = x.reshape(2, h * w, 3)[:, perm].reshape(2, h, w, 3)
    np.testing.assert_allclose(global_avg_pool(Tensor(x)).data, global_avg_pool(Tensor(xp)).data, atol=1e-12)


# -------------------------------------------------------------- softmax

def test_softmax_examples():
    np.testing.assert_allclose(softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3, atol=1e-15)
    ref = [0.6652409557748219, 0.24472847105479764, 0.09003057317038046]  # direct exp/normalise
    np.testing.assert_allclose(softmax(Tensor([2.0, 1.0, 0.0])).data, ref, atol=1e-12)
    np.testing.assert_allclose(direct_softmax([2, 1, 0]), ref, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariance_and_normalisation(v, c):
    v = np.array(v)
    s = softmax(Tensor(v)).data
    assert abs(s.sum() - 1.0) <= 1e-12
    assert np.all(s >= 0)
    np.testing.assert_allclose(softmax(Tensor(v + c)).data, s, atol=1e-12)


def test_softmax_single_precision_rows():
    v = np.random.default_rng(10).standard_normal((100, 7)).astype(np.float32) * 5
    s = softmax(Tensor(v)).data
    assert s.dtype == np.float32
    assert np.abs(s.sum(axis=1) - 1).max() <= 1e-6


def test_softmax_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        softmax(Tensor([0.0, np.nan]))


# --------------------------------------------------------- cross entropy

def test_cross_entropy_examples():
    assert cross_entropy(Tensor([0.0, 1.0, 0.0]), 1, 3).data <= 1e-10
    assert cross_entropy(Tensor([1 / 3] * 3), 2, 3).data == pytest.approx(UNIFORM3_CE, abs=1e-12)
    assert UNIFORM3_CE == pytest.approx((math.log(3) + 2 * math.log(1.5)) / 3, abs=1e-15)
    with pytest.raises(ValueError):
        cross_entropy(Tensor([0.5, 0.5]), 2, 2)


def test_cross_entropy_gradient_through_softmax():
    rng = np.random.default_rng(11)
    logits = parameter(rng.standard_normal((4, 5)), "logits")
    labels = np.array([0, 3, 4, 1])
    f = lambda: cross_entropy(softmax(logits), labels, 5)  # noqa: E731
    (g,) = grad_of(f, logits)
    n = finite_diff_grad(lambda: float(f().data), logits)
    np.testing.assert_allclose(g, n, atol=1e-6)
    assert numeric_rel_err(g, n) <= 1e-5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=6), st.data())
def test_cross_entropy_nonnegative(p, data):
    k = data.draw(st.integers(0, len(p) - 1))
    assert cross_entropy(Tensor(p), k, len(p)).data >= 0


# --------------------------------------------------------------- dropout

def test_dropout_identity_cases():
    x = Tensor(np.ones((2, 3)))
    rng = np.random.default_rng(0)
    assert dropout(x, 0.0, True, rng) is x
    assert dropout(x, 0.5, False, rng) is x
    with pytest.raises(ValueError):
        dropout(x, 1.0, True, rng)


def test_dropout_rate_and_scale():
    x = Tensor(np.ones(10**6, dtype=np.float32))
    out = dropout(x, 0.2, True, np.random.default_rng(1234)).data
    dropped = np.mean(out == 0)
    assert abs(dropped - 0.2) <= 0.002
    np.testing.assert_allclose(out[out != 0], 1 / 0.8, rtol=1e-6)


# -------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    x = parameter(np.random.default_rng(12).standard_normal((2, 3)), "x")
    (g,) = grad_of(lambda: tensor_sum(x), x)
    np.testing.assert_array_equal(g, np.ones((2, 3)))


def test_backward_unreachable_param_gets_zero_and_tape_is_single_use():
    x = parameter(np.ones(3), "x")
    other = parameter(np.ones((2, 2)), "other")
    with Tape() as tape:
        loss = sum_squares(x)
    tape.backward(loss, [x, other])
    np.testing.assert_array_equal(x.grad, [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(other.grad, np.zeros((2, 2)))
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_backward_accumulates_shared_inputs():
    x = parameter(np.array([1.0, -2.0]), "x")
    (g,) = grad_of(lambda: tensor_sum(add(x, x, relu(x))), x)
    np.testing.assert_array_equal(g, [3.0, 2.0])


def test_backward_reports_nonfinite_gradient_by_name():
    from agos.tensor import _result

    x = parameter(np.ones(2), "weights.w")
    with Tape() as tape:
        bad = _result("bad", x.data.copy(), (x,), lambda g: (g * np.inf,))
        loss = tensor_sum(bad)
    with pytest.raises(NonFiniteError, match="weights.w"):
        tape.backward(loss)


def test_backward_is_deterministic():
    rng = np.random.default_rng(13)
    x0 = rng.standard_normal((2, 5, 5, 3))
    w0 = rng.standard_normal((3, 3, 3, 4))

    def run():
        k = ConvKernel(parameter(w0.copy(), "w"), parameter(np.zeros(4), "b"), 2)
        with Tape() as tape:
            loss = tensor_sum(relu(conv2d(Tensor(x0), k)))
        tape.backward(loss)
        return k.weight.grad

    np.testing.assert_array_equal(run(), run())


# -------------------------------------------------------- finite_diff_grad

def test_finite_diff_known_derivatives():
    theta = parameter(np.array([2.0]), "theta")
    assert finite_diff_grad(lambda: 0.5 * theta.data[0] ** 2, theta)[0] == pytest.approx(2.0, abs=1e-9)
    assert finite_diff_grad(lambda: 3.0 * theta.data[0], theta)[0] == pytest.approx(3.0, abs=1e-10)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda: 0.0, theta, 0.0)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sengraph import tensor as T
from sengraph.tensor import DimensionError, Tape, TapeError, Tensor


def rel_err(a, b, floor=1e-7):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def tape_grad(fn, *xs):
    for x in xs:
        x.zero_grad()
    with Tape():
        out = fn(*xs)
    T.backward(out)
    return [x.grad.copy() for x in xs]


def naive_conv(x, k, s):
    h, w = x.shape
    m1, m2 = k.shape
    oh, ow = (h - m1) // s + 1, (w - m2) // s + 1
    out = np.zeros((oh, ow))
    for i in range(oh):
        for j in range(ow):
            acc = 0.0
            for a in range(m1):
                for b in range(m2):
                    acc += k[a, b] * x[i * s + a, j * s + b]
            out[i, j] = acc
    return out


# ---------------------------------------------------------------- matmul

def test_matmul_identity_and_zero():
    eye = Tensor([[1, 0], [0, 1]])
    b = Tensor([[3, 4], [5, 6]])
    np.testing.assert_array_equal(T.matmul(eye, b).data, [[3, 4], [5, 6]])
    np.testing.assert_array_equal(T.matmul(Tensor([[1, 2]]), Tensor([[0], [0]])).data, [[0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(-2, 2, (4, 2)), requires_grad=True)
    ga, gb = tape_grad(lambda a, b: T.sum_all(T.matmul(a, b)), a, b)
    f = lambda: T.matmul(a, b).data.sum()
    assert rel_err(ga, T.numeric_grad(f, a)) < 1e-5
    assert rel_err(gb, T.numeric_grad(f, b)) < 1e-5


# ---------------------------------------------------------------- conv2d

def test_conv_identity_kernel():
    x = np.random.default_rng(1).normal(size=(6, 7))
    np.testing.assert_array_equal(T.conv2d(Tensor(x), Tensor([[1.0]])).data, x)


def test_conv_constant_input_scales_by_kernel_sum():
    k = np.random.default_rng(2).normal(size=(3, 3))
    out = T.conv2d(Tensor(np.full((8, 8), 2.5)), Tensor(k)).data
    np.testing.assert_allclose(out, 2.5 * k.sum(), rtol=1e-12)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(3)
    x, k = rng.normal(size=(8, 8)), rng.normal(size=(3, 3))
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(k)).data, naive_conv(x, k, 1), atol=1e-12, rtol=0)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), m1=st.integers(1, 9), m2=st.integers(1, 9),
       s=st.integers(1, 3), seed=st.integers(0, 2 ** 16))
def test_conv_oracle_all_kernel_sizes(h, w, m1, m2, s, seed):
    if m1 > h or m2 > w:
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.ones((h, w))), Tensor(np.ones((m1, m2))))
        return
    rng = np.random.default_rng(seed)
    x, k = rng.normal(size=(h, w)), rng.normal(size=(m1, m2))
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(k), s).data, naive_conv(x, k, s), atol=1e-12, rtol=0)


def test_conv_batched_equals_per_item():
    rng = np.random.default_rng(4)
    x, k = rng.normal(size=(4, 9, 9)), rng.normal(size=(3, 3))
    out = T.conv2d(Tensor(x), Tensor(k), 2).data
    for i in range(4):
        np.testing.assert_allclose(out[i], naive_conv(x[i], k, 2), atol=1e-12, rtol=0)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradients(stride):
    rng = np.random.default_rng(5)
    x = Tensor(rng.uniform(-2, 2, (2, 7, 8)), requires_grad=True)
    k = Tensor(rng.uniform(-2, 2, (3, 2)), requires_grad=True)
    w = rng.normal(size=T.conv2d(x, k, stride).shape)
    loss = lambda x, k: T.sum_all(T.mul(T.conv2d(x, k, stride), Tensor(w)))
    gx, gk = tape_grad(loss, x, k)
    f = lambda: float((T.conv2d(x, k, stride).data * w).sum())
    assert rel_err(gx, T.numeric_grad(f, x)) < 1e-5
    assert rel_err(gk, T.numeric_grad(f, k)) < 1e-5


def test_conv_kernel_too_large():
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.ones((2, 2))), Tensor(np.ones((3, 1))))


# ---------------------------------------------------------------- leaky relu / elementwise

def test_leaky_relu_definition():
    np.testing.assert_allclose(T.leaky_relu(Tensor([-1.0, 0.0, 2.0]), 0.01).data, [-0.01, 0.0, 2.0])
    x = np.array([0.0, 1.0, 3.5])
    np.testing.assert_array_equal(T.leaky_relu(Tensor(x)).data, x)


def test_leaky_relu_gradient_away_from_kink():
    rng = np.random.default_rng(6)
    v = rng.uniform(-2, 2, 50)
    v = v[np.abs(v) > 1e-4]
    x = Tensor(v, requires_grad=True)
    (g,) = tape_grad(lambda x: T.sum_all(T.leaky_relu(x, 0.2)), x)
    assert rel_err(g, T.numeric_grad(lambda: T.leaky_relu(x, 0.2).data.sum(), x)) < 1e-5


def test_leaky_relu_rejects_bad_slope():
    with pytest.raises(ValueError):
        T.leaky_relu(Tensor([1.0]), 1.5)


def test_elementwise_identities():
    a = Tensor(np.random.default_rng(7).normal(size=(3, 2)))
    z = Tensor(np.zeros((3, 2)))
    np.testing.assert_array_equal(T.elementwise(a, z, "mul").data, 0.0)
    np.testing.assert_array_equal(T.elementwise(a, z, "add").data, a.data)
    with pytest.raises(DimensionError):
        T.elementwise(a, Tensor(np.zeros((2, 3))), "add")


@pytest.mark.parametrize("op", ["mul", "add", "sub"])
def test_elementwise_gradients(op):
    rng = np.random.default_rng(8)
    a = Tensor(rng.uniform(-2, 2, (4, 3)), requires_grad=True)
    b = Tensor(rng.uniform(-2, 2, (4, 3)), requires_grad=True)
    w = rng.normal(size=(4, 3))
    ga, gb = tape_grad(lambda a, b: T.sum_all(T.mul(T.elementwise(a, b, op), Tensor(w))), a, b)
    f = lambda: float((T.elementwise(a, b, op).data * w).sum())
    assert rel_err(ga, T.numeric_grad(f, a)) < 1e-5
    assert rel_err(gb, T.numeric_grad(f, b)) < 1e-5


def test_sigmoid_and_gather_gradients():
    rng = np.random.default_rng(9)
    x = Tensor(rng.uniform(-2, 2, (5, 3)), requires_grad=True)
    idx = [0, 2, 2, 4, 1, 0]
    w = rng.normal(size=(6, 3))
    (g,) = tape_grad(lambda x: T.sum_all(T.mul(T.sigmoid(T.take_rows(x, idx)), Tensor(w))), x)
    f = lambda: float((T.sigmoid(T.take_rows(x, idx)).data * w).sum())
    assert rel_err(g, T.numeric_grad(f, x)) < 1e-5


def test_concat_reshape_gradients():
    rng = np.random.default_rng(10)
    a = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(2, 9))

    def fn(a, b):
        return T.sum_all(T.mul(T.reshape(T.concat([a, b], axis=1), (2, 9)), Tensor(w)))

    ga, gb = tape_grad(fn, a, b)
    f = lambda: float((np.concatenate([a.data, b.data], 1).reshape(2, 9) * w).sum())
    assert rel_err(ga, T.numeric_grad(f, a)) < 1e-5
    assert rel_err(gb, T.numeric_grad(f, b)) < 1e-5


# ---------------------------------------------------------------- loss

def test_bce_half_is_ln2():
    loss = T.bce_loss(Tensor(np.full(6, 0.5)), np.array([0, 1, 1, 0, 0, 1]))
    assert loss.item() == pytest.approx(math.log(2), abs=1e-12)


def test_bce_exact_prediction_bounded_by_clamp():
    y = np.array([0, 1, 1, 0])
    loss = T.bce_loss(Tensor(y.astype(float)), y)
    assert 0 <= loss.item() <= -math.log(1 - T.PROB_CLAMP) + 1e-15


def test_bce_rejects_bad_labels():
    with pytest.raises(ValueError):
        T.bce_loss(Tensor([0.3, 0.4]), np.array([0, 2]))


@pytest.mark.parametrize("weight", [None, (0.4, 2.5)])
def test_bce_gradient(weight):
    rng = np.random.default_rng(11)
    p = Tensor(rng.uniform(0.05, 0.95, 12), requires_grad=True)
    y = rng.integers(0, 2, 12)
    (g,) = tape_grad(lambda p: T.bce_loss(p, y, weight), p)
    assert rel_err(g, T.numeric_grad(lambda: T.bce_loss(p, y, weight).item(), p)) < 1e-5


def test_bce_weighted_formula():
    p = np.array([0.2, 0.7, 0.9])
    y = np.array([0, 1, 0])
    w0, w1 = 0.5, 3.0
    expect = -np.mean(w1 * y * np.log(p) + w0 * (1 - y) * np.log(1 - p))
    assert T.bce_loss(Tensor(p), y, (w0, w1)).item() == pytest.approx(expect, rel=1e-12)


# ---------------------------------------------------------------- backward contract

def test_backward_sum_gives_ones_and_unused_gives_zeros():
    x = Tensor(np.arange(4.0), requires_grad=True)
    y = Tensor(np.arange(3.0), requires_grad=True)
    with Tape():
        loss = T.sum_all(x)
        _ = T.scale(y, 2.0)
    T.backward(loss)
    np.testing.assert_array_equal(x.grad, 1.0)
    np.testing.assert_array_equal(y.grad, 0.0)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        out = T.scale(x, 2.0)
    with pytest.raises(TapeError):
        T.backward(out)


def test_backward_twice_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        loss = T.sum_all(x)
    T.backward(loss)
    with pytest.raises(TapeError):
        T.backward(loss)
    np.testing.assert_array_equal(x.grad, 1.0)


def test_no_tape_means_no_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = T.sum_all(x)
    with pytest.raises(TapeError):
        T.backward(loss)


def test_shared_subexpression_accumulates():
    x = Tensor([1.5, -0.5], requires_grad=True)
    (g,) = tape_grad(lambda x: T.sum_all(T.mul(x, x)), x)
    np.testing.assert_allclose(g, 2 * x.data)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_forward_ops_stay_finite(x):
    t = Tensor(x)
    for out in (T.leaky_relu(t), T.sigmoid(t), T.mul(t, t), T.matmul(t, Tensor(x.T)),
                T.bce_loss(T.sigmoid(t), (x > 0).astype(float))):
        assert np.all(np.isfinite(out.data))

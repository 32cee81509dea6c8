import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st
from hypothesis.extra.numpy import arrays

from app.core.errors import DimensionError, NonFiniteError, ValidationFailure
from app.engine import ops
from app.engine.gradcheck import gradcheck
from app.engine.tensor import Tensor, is_grad_enabled, no_grad, zero_grads

OP_TOLERANCE = 1e-5


def param(rng, *shape, low=None, high=None):
    values = rng.normal(size=shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(values, requires_grad=True, dtype=np.float64)


def away_from_kinks(rng, *shape):
    """Values at least 0.05 from 0 and +-0.5, where relu, abs and clamp have kinks."""
    magnitude = np.where(rng.random(shape) < 0.5, rng.uniform(0.05, 0.45, shape), rng.uniform(0.55, 2.0, shape))
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return Tensor(sign * magnitude, requires_grad=True, dtype=np.float64)


def weighted_sum(out: Tensor, rng) -> Tensor:
    """Scalar objective with non-uniform output weights, so every gradient entry is exercised."""
    w = Tensor(rng.normal(size=out.shape), dtype=np.float64)
    return ops.sum_all(ops.hadamard(out, w))


def assert_gradients(fn, params, tolerance=OP_TOLERANCE):
    errors = gradcheck(fn, params)
    assert max(errors.values()) < tolerance, errors


UNARY = {
    "sigmoid": ops.sigmoid,
    "tanh": ops.tanh,
    "relu": ops.relu,
    "leaky_relu": ops.leaky_relu,
    "square": ops.square,
    "mean": ops.mean_all,
    "global_avg_pool": ops.global_avg_pool,
    "upsample_nearest": ops.upsample_nearest,
    "softmax": lambda x: ops.softmax(ops.reshape(x, (x.shape[0], -1))),
    "scale": lambda x: ops.scale(x, -2.5),
    "clamp": lambda x: ops.clamp(x, -0.5, 0.5),
    "slice_channels": lambda x: ops.slice_channels(x, 1, 3),
    "reshape": lambda x: ops.reshape(x, (2, -1)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@pytest.mark.parametrize("seed", range(3))
def test_unary_op_gradients(name, seed):
    rng = np.random.default_rng(seed)
    x = away_from_kinks(rng, 2, 3, 4, 4)
    weights_rng = np.random.default_rng(100 + seed)
    w = Tensor(weights_rng.normal(size=UNARY[name](x).shape), dtype=np.float64)
    assert_gradients(lambda: ops.sum_all(ops.hadamard(UNARY[name](x), w)), [x])


@pytest.mark.parametrize("seed", range(10))
def test_binary_op_gradients(seed):
    rng = np.random.default_rng(seed)
    a = param(rng, 2, 3, 5)
    offset = away_from_kinks(rng, 2, 3, 5).data
    b = Tensor(a.data + offset, requires_grad=True, dtype=np.float64)
    w = Tensor(rng.normal(size=(2, 3, 5)), dtype=np.float64)
    for op in (ops.add, ops.sub, ops.hadamard, ops.abs_diff):
        assert_gradients(lambda: ops.sum_all(ops.hadamard(op(a, b), w)), [a, b])


@pytest.mark.parametrize("seed", range(10))
def test_conv2d_gradients(seed):
    rng = np.random.default_rng(seed)
    x = param(rng, 2, 3, 6, 6)
    kernel = param(rng, 4, 3, 3, 3)
    bias = param(rng, 4)
    stride, padding = (1, 1) if seed % 2 else (2, 1)
    out_shape = ops.conv2d(x, kernel, bias, stride=stride, padding=padding).shape
    w = Tensor(rng.normal(size=out_shape), dtype=np.float64)
    fn = lambda: ops.sum_all(ops.hadamard(ops.conv2d(x, kernel, bias, stride=stride, padding=padding), w))
    assert_gradients(fn, [x, kernel, bias])


@pytest.mark.parametrize("seed", range(5))
def test_linear_concat_tile_gradients(seed):
    rng = np.random.default_rng(seed)
    x, weight, bias = param(rng, 3, 5), param(rng, 4, 5), param(rng, 4)
    assert_gradients(lambda: weighted_sum(ops.linear(x, weight, bias), np.random.default_rng(seed)), [x, weight, bias])

    a, b = param(rng, 2, 1, 3, 3), param(rng, 2, 2, 3, 3)
    assert_gradients(lambda: weighted_sum(ops.concat([a, b], axis=1), np.random.default_rng(seed)), [a, b])

    peephole, cell = param(rng, 1, 2, 3, 3), param(rng, 4, 2, 3, 3)
    fn = lambda: weighted_sum(ops.hadamard(ops.tile_batch(peephole, 4), cell), np.random.default_rng(seed))
    assert_gradients(fn, [peephole, cell])

    logits = param(rng, 3, 2)
    assert_gradients(lambda: weighted_sum(ops.select_column(ops.softmax(logits), 1), np.random.default_rng(seed)),
                     [logits])


def test_log_gradient_on_positive_inputs():
    rng = np.random.default_rng(3)
    x = param(rng, 3, 4, low=0.5, high=2.0)
    assert_gradients(lambda: weighted_sum(ops.log(x), np.random.default_rng(4)), [x])


def naive_conv(x, kernel, bias, stride, padding):
    b, cin, h, w = x.shape
    cout, _, kh, kw = kernel.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((b, cout, ho, wo))
    for n in range(b):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * kernel[o]) + bias[o]
    return out


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_naive_loop(stride, padding):
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 3, 4, 4))
    kernel = rng.normal(size=(2, 3, 3, 3))
    bias = rng.normal(size=2)
    got = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(kernel, dtype=np.float64), Tensor(bias, dtype=np.float64),
                     stride=stride, padding=padding)
    np.testing.assert_allclose(got.data, naive_conv(x, kernel, bias, stride, padding), rtol=1e-10, atol=1e-10)


def test_conv2d_channel_mismatch_names_the_axis():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    kernel = Tensor(np.zeros((1, 3, 3, 3)))
    with pytest.raises(DimensionError) as err:
        ops.conv2d(x, kernel)
    assert err.value.axis == "channel"
    assert (err.value.expected, err.value.actual) == (3, 2)


def test_hadamard_rejects_broadcasting():
    with pytest.raises(DimensionError) as err:
        ops.hadamard(Tensor(np.ones((1, 2, 3, 4))), Tensor(np.ones((1, 3, 3, 4))))
    assert err.value.axis == "channel"


def test_non_finite_forward_raises():
    with pytest.raises(NonFiniteError) as err:
        ops.scale(Tensor(np.ones(3)), float("inf"))
    assert err.value.op == "scale"


def test_log_rejects_non_positive_input():
    with pytest.raises(ValidationFailure):
        ops.log(Tensor(np.array([1.0, 0.0])))


def test_unknown_activation():
    with pytest.raises(ValidationFailure):
        ops.activation(Tensor(np.ones(2)), "gelu")


def test_ops_preserve_single_precision():
    x = Tensor(np.ones((1, 2, 4, 4), dtype=np.float32), requires_grad=True)
    k = Tensor(np.ones((2, 2, 3, 3), dtype=np.float32), requires_grad=True)
    y = ops.sigmoid(ops.conv2d(x, k, padding=1))
    assert y.dtype == np.float32
    ops.mean_all(y).backward()
    assert x.grad.dtype == np.float32
    assert k.grad.dtype == np.float32


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True, dtype=np.float64)
    with no_grad():
        assert not is_grad_enabled()
        y = ops.square(x)
    assert is_grad_enabled()
    assert not y.requires_grad
    assert y.is_leaf


def test_gradients_accumulate_over_shared_subgraphs():
    x = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
    y = ops.add(ops.hadamard(x, x), x)  # x^2 + x
    ops.sum_all(y).backward()
    np.testing.assert_allclose(x.grad, [5.0])


def test_sigmoid_stays_inside_open_interval():
    out = ops.sigmoid(Tensor(np.array([-200.0, 200.0], dtype=np.float32))).data
    assert 0.0 < out[0] and out[1] < 1.0


@hyp_settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-10, 10)), arrays(np.float64, (2, 3), elements=st.floats(-10, 10)))
def test_hadamard_identities(a, b):
    ta, tb = Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)
    np.testing.assert_array_equal(ops.hadamard(ta, tb).data, ops.hadamard(tb, ta).data)
    np.testing.assert_array_equal(ops.hadamard(ta, Tensor(np.ones((2, 3)), dtype=np.float64)).data, a)
    np.testing.assert_array_equal(ops.hadamard(ta, Tensor(np.zeros((2, 3)), dtype=np.float64)).data, np.zeros((2, 3)) * a)


@hyp_settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_conv2d_is_linear_in_its_input(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(1, 2, 5, 5))
    kernel = Tensor(rng.normal(size=(3, 2, 3, 3)), dtype=np.float64)

    def conv(x):
        return ops.conv2d(Tensor(x, dtype=np.float64), kernel, padding=1).data

    np.testing.assert_allclose(conv(alpha * x1 + beta * x2), alpha * conv(x1) + beta * conv(x2), atol=1e-9)


def test_disconnected_parameters_get_zero_gradients():
    used = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float64)
    unused = Tensor(np.ones((2, 2)), requires_grad=True, dtype=np.float64)
    zero_grads([used, unused])
    ops.sum_all(ops.square(used)).backward()
    np.testing.assert_allclose(used.grad, [2.0, 4.0])
    np.testing.assert_array_equal(unused.grad, np.zeros((2, 2)))

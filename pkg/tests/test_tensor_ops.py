import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.errors import ConfigurationError, ContractError, DimensionError
from src.tensor import (
    RunningStats,
    Tensor,
    backward,
    batchnorm2d,
    conv2d,
    global_avg_pool,
    linear,
    mul,
    relu,
    residual_add,
    softmax_cross_entropy,
    tensor_sum,
)


def naive_conv(x, w, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    for ch in range(c):
                        for di in range(k):
                            for dj in range(k):
                                out[b, f, i, j] += xp[b, ch, i * stride + di, j * stride + dj] * w[f, ch, di, dj]
    return out


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def test_conv_all_ones():
    out = conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))))
    assert out.dims == [1, 1, 2, 2]
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 9.0))


def test_conv_output_dims_with_stride_and_padding():
    out = conv2d(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((4, 3, 3, 3))), stride=2, pad=1)
    assert out.dims == [1, 4, 4, 4]


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    out = conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, naive_conv(x, w, stride, pad), rtol=1e-6, atol=1e-12)


def test_conv_channel_mismatch_names_axes():
    with pytest.raises(DimensionError) as info:
        conv2d(Tensor(np.zeros((1, 3, 5, 5))), Tensor(np.zeros((2, 2, 3, 3))))
    assert "input.C" in str(info.value)


def test_conv_kernel_larger_than_padded_input():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


def test_mixed_precision_is_rejected():
    x = Tensor(np.zeros((1, 1, 3, 3), dtype=np.float32))
    w = Tensor(np.zeros((1, 1, 3, 3), dtype=np.float64))
    with pytest.raises(ContractError):
        conv2d(x, w)


# ---------------------------------------------------------------------------
# batchnorm2d
# ---------------------------------------------------------------------------

def test_batchnorm_train_standardizes_channels():
    rng = np.random.default_rng(0)
    x = 5.0 + 2.0 * rng.standard_normal((8, 3, 6, 6))
    stats = RunningStats.fresh(3, np.dtype(np.float64))
    out = batchnorm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), stats, mode="train")
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.data.std(axis=(0, 2, 3)), 1.0, atol=1e-4)
    # running stats moved towards the batch statistics
    assert np.all(stats.mean > 0)


def test_batchnorm_eval_is_pure():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((4, 2, 3, 3)))
    stats = RunningStats.fresh(2, np.dtype(np.float64))
    stats.mean[:] = [0.5, -0.5]
    before = (stats.mean.copy(), stats.var.copy())
    gamma, beta = Tensor(np.array([1.5, 0.5])), Tensor(np.array([0.1, 0.2]))
    a = batchnorm2d(x, gamma, beta, stats, mode="eval").data
    b = batchnorm2d(x, gamma, beta, stats, mode="eval").data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(stats.mean, before[0])
    np.testing.assert_array_equal(stats.var, before[1])


def test_batchnorm_channel_mismatch():
    stats = RunningStats.fresh(2, np.dtype(np.float64))
    with pytest.raises(DimensionError):
        batchnorm2d(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), stats)


# ---------------------------------------------------------------------------
# Elementwise, pooling and dense
# ---------------------------------------------------------------------------

def test_relu():
    np.testing.assert_array_equal(relu(Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0.0, 0.0, 2.0])


def test_global_avg_pool_constant_map():
    out = global_avg_pool(Tensor(np.full((2, 3, 4, 4), 7.0)))
    np.testing.assert_array_equal(out.data, np.full((2, 3), 7.0))


def test_linear_identity():
    x = np.arange(6.0).reshape(2, 3)
    out = linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x)


def test_residual_add_shape_mismatch():
    with pytest.raises(DimensionError):
        residual_add(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))


# ---------------------------------------------------------------------------
# softmax_cross_entropy
# ---------------------------------------------------------------------------

def test_cross_entropy_uniform_logits():
    loss = softmax_cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1, 3]))
    assert loss.item() == pytest.approx(math.log(4), abs=1e-12)


def test_cross_entropy_confident_logits():
    loss = softmax_cross_entropy(Tensor(np.array([[10.0, 0.0, 0.0, 0.0]])), np.array([0]))
    assert loss.item() == pytest.approx(math.log1p(3 * math.exp(-10)), rel=1e-9)


def test_cross_entropy_against_direct_evaluation():
    logits = [2.0, 1.0, 0.0, -1.0]
    expected = math.log(sum(math.exp(v) for v in logits)) - 1.0
    loss = softmax_cross_entropy(Tensor(np.array([logits])), np.array([1]))
    assert loss.item() == pytest.approx(expected, rel=1e-12)


def test_cross_entropy_large_logits_stay_finite():
    loss = softmax_cross_entropy(Tensor(np.array([[1000.0, -1000.0]])), np.array([1]))
    assert loss.item() == pytest.approx(2000.0)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ContractError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_cross_entropy_needs_two_classes():
    with pytest.raises(ConfigurationError):
        softmax_cross_entropy(Tensor(np.zeros((2, 1))), np.array([0, 0]))


@settings(max_examples=50, deadline=None)
@given(
    logits=arrays(np.float64, (3, 4), elements=st.floats(-20, 20)),
    shift=st.floats(-50, 50),
)
def test_cross_entropy_is_shift_invariant(logits, shift):
    labels = np.array([0, 2, 3])
    a = softmax_cross_entropy(Tensor(logits), labels).item()
    b = softmax_cross_entropy(Tensor(logits + shift), labels).item()
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)
    assert a >= 0.0


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_backward_of_sum_is_ones():
    x = Tensor(np.arange(5.0), requires_grad=True)
    backward(tensor_sum(x))
    np.testing.assert_array_equal(x.grad, np.ones(5))


def test_backward_of_inner_product():
    w = np.array([0.5, -2.0, 3.0])
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    backward(tensor_sum(mul(Tensor(w), x)))
    np.testing.assert_array_equal(x.grad, w)


def test_backward_accumulates():
    x = Tensor(np.ones(3), requires_grad=True)
    backward(tensor_sum(x))
    backward(tensor_sum(x))
    np.testing.assert_array_equal(x.grad, np.full(3, 2.0))


def test_backward_wrt_restricts_targets():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.full(2, 3.0), requires_grad=True)
    backward(tensor_sum(mul(a, b)), wrt=[a])
    np.testing.assert_array_equal(a.grad, [3.0, 3.0])
    assert b.grad is None


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(relu(x))

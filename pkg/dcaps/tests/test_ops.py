"""Tests for dcaps.numerics.ops (convolutions, contractions, nonlinearities)."""

import numpy as np
import pytest

from dcaps.core.errors import DimensionError
from dcaps.numerics.gradcheck import check_gradients
from dcaps.numerics.ops import (
    clip,
    conv2d,
    dense,
    elementwise,
    extract_patches,
    l2norm,
    log,
    output_extent,
    relu,
    sigmoid,
    softmax,
    squash,
    transposed_conv2d,
)
from dcaps.numerics.tensor import Tensor, backward
from dcaps.tests.helpers.config_test_helpers import assert_allclose_exact


def _img(rows):
    """Single-channel ``1×H×W×1`` image from nested rows."""
    arr = np.asarray(rows, dtype=np.float64)
    return arr.reshape(1, arr.shape[0], arr.shape[1], 1)


# -- geometry ------------------------------------------------------------------


@pytest.mark.parametrize(
    "size,kernel,stride,padding,expected",
    [
        (64, 5, 1, "same", 64),
        (64, 5, 2, "same", 32),
        (5, 3, 2, "same", 3),
        (5, 3, 1, "valid", 3),
        (6, 3, 2, "valid", 2),
        (2, 3, 1, "valid", 0),
    ],
)
def test_output_extent(size, kernel, stride, padding, expected):
    assert output_extent(size, kernel, stride, padding) == expected


def test_output_extent_rejects_bad_arguments():
    with pytest.raises(DimensionError):
        output_extent(4, 3, 0, "same")
    with pytest.raises(DimensionError):
        output_extent(4, 3, 1, "reflect")


def test_extract_patches_shape():
    x = Tensor(np.zeros((2, 5, 7, 3)))
    assert extract_patches(x, 3, stride=2).shape == (2, 3, 4, 3, 3, 3)


# -- conv2d --------------------------------------------------------------------


def test_conv2d_scalar_multiply_add():
    out = conv2d(Tensor(_img([[2.0]])), Tensor(np.full((1, 1, 1, 1), 3.0)), Tensor([1.0]))
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == pytest.approx(7.0)


def test_conv2d_valid_window_sum():
    out = conv2d(Tensor(_img([[1, 2], [3, 4]])), Tensor(np.ones((2, 2, 1, 1))), padding="valid")
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == pytest.approx(10.0)


def test_conv2d_identity_kernel():
    x = np.random.default_rng(0).standard_normal((1, 3, 3, 1))
    out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
    assert_allclose_exact(out.data, x)


def test_conv2d_same_padding_puts_extra_row_bottom_right():
    out = conv2d(Tensor(np.ones((1, 4, 4, 1))), Tensor(np.ones((3, 3, 1, 1))), stride=2)
    assert out.shape == (1, 2, 2, 1)
    np.testing.assert_array_equal(out.data[0, :, :, 0], [[9, 6], [6, 4]])


def test_conv2d_kernel_gradient_is_window():
    x = Tensor(_img([[1, 2], [3, 4]]))
    k = Tensor(np.ones((2, 2, 1, 1)), requires_grad=True)
    backward(conv2d(x, k, padding="valid").sum())
    np.testing.assert_allclose(k.grad[:, :, 0, 0], [[1, 2], [3, 4]])


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError, match="channels"):
        conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))


def test_conv2d_empty_output():
    with pytest.raises(DimensionError, match="empty"):
        conv2d(Tensor(np.zeros((1, 2, 2, 1))), Tensor(np.zeros((3, 3, 1, 1))), padding="valid")


def test_conv2d_bias_shape_checked():
    with pytest.raises(DimensionError, match="bias"):
        conv2d(Tensor(np.zeros((1, 4, 4, 1))), Tensor(np.zeros((3, 3, 1, 2))), Tensor(np.zeros(3)))


@pytest.mark.parametrize("stride,padding", [(1, "same"), (2, "same"), (1, "valid"), (2, "valid")])
def test_conv2d_gradients_match_finite_differences(stride, padding):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 5, 6, 2))
    k = rng.standard_normal((3, 3, 2, 3))
    b = rng.standard_normal(3)
    err = check_gradients(
        lambda x, k, b: conv2d(x, k, b, stride=stride, padding=padding), [x, k, b], rng
    )
    assert err < 1e-6


# -- transposed_conv2d -----------------------------------------------------------


def test_transposed_conv_single_pixel_stamps_kernel():
    k = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1, 1)
    out = transposed_conv2d(Tensor(_img([[1.0]])), Tensor(k), stride=2)
    assert out.shape == (1, 2, 2, 1)
    np.testing.assert_array_equal(out.data[0, :, :, 0], [[1, 2], [3, 4]])


def test_transposed_conv_identity():
    x = np.random.default_rng(1).standard_normal((1, 3, 4, 1))
    out = transposed_conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), stride=1)
    assert_allclose_exact(out.data, x)


def test_transposed_conv_overlap_add_column():
    out = transposed_conv2d(Tensor(_img([[1.0], [1.0]])), Tensor(np.ones((2, 1, 1, 1))), stride=2)
    assert out.shape == (1, 4, 2, 1)
    np.testing.assert_array_equal(out.data[0, :, 0, 0], [1, 1, 1, 1])


def test_transposed_conv_then_conv_round_trips_shape():
    x = Tensor(np.zeros((1, 3, 5, 2)))
    up = transposed_conv2d(x, Tensor(np.zeros((3, 3, 2, 4))), stride=2)
    assert up.shape == (1, 6, 10, 4)
    down = conv2d(up, Tensor(np.zeros((3, 3, 4, 2))), stride=2)
    assert down.shape == x.shape


def test_transposed_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        transposed_conv2d(Tensor(np.zeros((1, 2, 2, 3))), Tensor(np.zeros((2, 2, 2, 1))))


@pytest.mark.parametrize("kernel,stride", [(2, 2), (4, 2), (3, 1), (5, 2)])
def test_transposed_conv_gradients_match_finite_differences(kernel, stride):
    rng = np.random.default_rng(kernel * 10 + stride)
    x = rng.standard_normal((1, 3, 2, 2))
    k = rng.standard_normal((kernel, kernel, 2, 3))
    err = check_gradients(lambda x, k: transposed_conv2d(x, k, stride=stride), [x, k], rng)
    assert err < 1e-6


# -- dense / einsum ----------------------------------------------------------------


def test_dense_matches_matmul():
    rng = np.random.default_rng(2)
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 5)), rng.standard_normal(5)
    assert_allclose_exact(dense(Tensor(x), Tensor(w), Tensor(b)).data, x @ w + b)


# -- nonlinearities ------------------------------------------------------------------


def test_elementwise_examples():
    assert elementwise("sigmoid", [0.0]).data.item() == pytest.approx(0.5)
    assert elementwise("l2norm", [3.0, 4.0]).data.item() == pytest.approx(5.0)
    assert elementwise("mean", [[1.0, 2.0], [3.0, 4.0]]).item() == pytest.approx(2.5)
    assert elementwise("sum", [[1.0, 2.0], [3.0, 4.0]], axis=0).data.tolist() == [4.0, 6.0]
    assert elementwise("relu", [-1.0, 2.0]).data.tolist() == [0.0, 2.0]
    assert elementwise("add", [1.0, 2.0], 1.0).data.tolist() == [2.0, 3.0]
    assert elementwise("mul", [1.0, 2.0], 3.0).data.tolist() == [3.0, 6.0]


def test_elementwise_unknown_op():
    with pytest.raises(DimensionError, match="unknown elementwise"):
        elementwise("tanh", [0.0])


def test_elementwise_broadcast_failure():
    with pytest.raises(DimensionError):
        elementwise("add", np.ones((2, 3)), np.ones(4))


def test_sigmoid_is_stable_for_large_inputs():
    out = sigmoid(Tensor([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 1.0])


def test_relu_gradient_is_step():
    x = Tensor([-2.0, 0.5, 3.0], requires_grad=True)
    backward(relu(x).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 1.0])


def test_log_gradient():
    x = Tensor([0.5, 2.0], requires_grad=True)
    backward(log(x).sum())
    np.testing.assert_allclose(x.grad, [2.0, 0.5])


def test_clip_gradient_only_inside_bounds():
    x = Tensor([-1.0, 0.5, 2.0, 1.0], requires_grad=True)
    out = clip(x, 0.0, 1.0)
    np.testing.assert_array_equal(out.data, [0.0, 0.5, 1.0, 1.0])
    backward(out.sum())
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0, 0.0])


def test_l2norm_gradient_zero_at_origin():
    x = Tensor([[0.0, 0.0], [3.0, 4.0]], requires_grad=True)
    backward(l2norm(x).sum())
    np.testing.assert_allclose(x.grad, [[0.0, 0.0], [0.6, 0.8]])


@pytest.mark.parametrize(
    "vector,expected",
    [
        ([0.0, 0.0], [0.0, 0.0]),
        ([1.0, 0.0], [0.5, 0.0]),
        ([0.6, 0.8], [0.3, 0.4]),
        ([3.0, 0.0], [0.9, 0.0]),
    ],
)
def test_squash_examples(vector, expected):
    np.testing.assert_allclose(squash(Tensor(vector)).data, expected, atol=1e-12)


def test_squash_norm_below_one():
    s = np.random.default_rng(3).standard_normal((50, 8)) * 100
    norms = np.linalg.norm(squash(Tensor(s)).data, axis=-1)
    assert np.all(norms < 1.0)


def test_squash_gradient_zero_at_origin():
    x = Tensor([[0.0, 0.0, 0.0]], requires_grad=True)
    backward(squash(x).sum())
    np.testing.assert_array_equal(x.grad, np.zeros((1, 3)))


def test_softmax_normalizes_and_survives_large_logits():
    out = softmax(Tensor([[1000.0, 1000.0], [0.0, np.log(3.0)]]), axis=-1).data
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.25, 0.75]])


def _away_from_zero(rng, shape):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 1.0, size=shape)


_GRADIENT_CASES = {
    "squash": lambda rng: (squash, [rng.standard_normal((3, 4, 5))]),
    "softmax": lambda rng: (lambda x: softmax(x, axis=1), [rng.standard_normal((3, 4, 5))]),
    "sigmoid": lambda rng: (sigmoid, [rng.standard_normal((3, 4, 5))]),
    "l2norm": lambda rng: (l2norm, [rng.standard_normal((3, 4, 5))]),
    "relu": lambda rng: (relu, [_away_from_zero(rng, (3, 4, 5))]),
    "log": lambda rng: (log, [rng.uniform(0.5, 2.0, size=(3, 4, 5))]),
    "add": lambda rng: (lambda a, b: elementwise("add", a, b),
                        [rng.standard_normal((3, 4)), rng.standard_normal(4)]),
    "mul": lambda rng: (lambda a, b: elementwise("mul", a, b),
                        [rng.standard_normal((3, 4)), rng.standard_normal((3, 1))]),
    "mean": lambda rng: (lambda x: elementwise("mean", x, axis=1), [rng.standard_normal((3, 4, 5))]),
    "sum": lambda rng: (lambda x: elementwise("sum", x, axis=(0, 2)), [rng.standard_normal((3, 4, 5))]),
}


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name", sorted(_GRADIENT_CASES))
def test_op_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng([11, seed])
    fn, inputs = _GRADIENT_CASES[name](rng)
    assert check_gradients(fn, inputs, rng) < 1e-6

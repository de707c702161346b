"""numpy tensors with reverse-mode autodiff, the layer ops built on them,
and a finite-difference oracle for checking both."""

from dcaps.numerics.gradcheck import finite_diff_grad, relative_error
from dcaps.numerics.ops import (
    conv2d,
    dense,
    einsum,
    elementwise,
    l2norm,
    sigmoid,
    softmax,
    squash,
    transposed_conv2d,
)
from dcaps.numerics.tensor import Parameter, Tensor, backward, count_parameters, zero_grads

__all__ = [
    "Parameter",
    "Tensor",
    "backward",
    "conv2d",
    "count_parameters",
    "dense",
    "einsum",
    "elementwise",
    "finite_diff_grad",
    "l2norm",
    "relative_error",
    "sigmoid",
    "softmax",
    "squash",
    "transposed_conv2d",
    "zero_grads",
]

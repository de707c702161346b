"""Differentiable operations built on ``dcaps.numerics.tensor``.

Layouts are channels-last: images and feature maps are ``B×H×W×C``,
convolution kernels ``Kh×Kw×Cin×Cout``. Convolutions are expressed as a
window extraction (``extract_patches``) followed by a contraction
(``einsum``), the same two primitives the capsule layers use to form their
prediction vectors.

Padding modes:

- ``same``:  ``H' = ceil(H / stride)``; the padding deficit is split with
  the extra row/column at the bottom/right.
- ``valid``: ``H' = floor((H - Kh) / stride) + 1``.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from typing import Any

import numpy as np

from dcaps.core.errors import DimensionError
from dcaps.numerics.tensor import ArrayLike, Function, Tensor, as_tensor

PADDING_MODES = ("same", "valid")


# ---------------------------------------------------------------------------
# Window geometry
# ---------------------------------------------------------------------------


def output_extent(size: int, kernel: int, stride: int, padding: str) -> int:
    """Spatial output extent of a ``kernel``/``stride`` window sweep."""
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if padding == "same":
        return math.ceil(size / stride)
    if padding == "valid":
        if kernel > size:
            return 0
        return (size - kernel) // stride + 1
    raise DimensionError(f"unknown padding mode {padding!r}; expected one of {PADDING_MODES}")


def _padding_before(size: int, kernel: int, stride: int, padding: str) -> tuple[int, int]:
    out = output_extent(size, kernel, stride, padding)
    if padding == "valid":
        return 0, 0
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


class ExtractPatches(Function):
    """``B×H×W×C`` → ``B×H'×W'×Kh×Kw×C`` sliding windows, zero padded."""

    name = "extract_patches"

    def forward(self, x: np.ndarray, kernel: tuple[int, int], stride: int, padding: str) -> np.ndarray:
        if x.ndim != 4:
            raise DimensionError(f"extract_patches expects B×H×W×C, got shape {x.shape}")
        kh, kw = kernel
        _, h, w, _ = x.shape
        ho = output_extent(h, kh, stride, padding)
        wo = output_extent(w, kw, stride, padding)
        if ho < 1 or wo < 1:
            raise DimensionError(
                f"kernel {kh}×{kw} with stride {stride} ({padding}) yields an empty "
                f"output from a {h}×{w} input"
            )
        top, bottom = _padding_before(h, kh, stride, padding)
        left, right = _padding_before(w, kw, stride, padding)
        xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
        self.geometry = (kh, kw, stride, ho, wo, top, left, xp.shape)
        out = np.empty((x.shape[0], ho, wo, kh, kw, x.shape[3]), dtype=x.dtype)
        for dy in range(kh):
            for dx in range(kw):
                out[:, :, :, dy, dx, :] = xp[
                    :, dy:dy + (ho - 1) * stride + 1:stride, dx:dx + (wo - 1) * stride + 1:stride, :
                ]
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        kh, kw, stride, ho, wo, top, left, padded_shape = self.geometry
        h, w = self.inputs[0].shape[1:3]
        gp = np.zeros(padded_shape, dtype=grad.dtype)
        for dy in range(kh):
            for dx in range(kw):
                gp[:, dy:dy + (ho - 1) * stride + 1:stride, dx:dx + (wo - 1) * stride + 1:stride, :] += (
                    grad[:, :, :, dy, dx, :]
                )
        return (gp[:, top:top + h, left:left + w, :],)


def extract_patches(x: Tensor, kernel: int | tuple[int, int], stride: int = 1,
                    padding: str = "same") -> Tensor:
    if isinstance(kernel, int):
        kernel = (kernel, kernel)
    return ExtractPatches.apply(x, kernel=tuple(kernel), stride=stride, padding=padding)


# ---------------------------------------------------------------------------
# Contractions
# ---------------------------------------------------------------------------


class Einsum(Function):
    """Two-operand ``np.einsum`` without repeated or operand-private summed indices."""

    name = "einsum"

    def forward(self, a: np.ndarray, b: np.ndarray, subscripts: str) -> np.ndarray:
        inputs, out = subscripts.replace(" ", "").split("->")
        sa, sb = inputs.split(",")
        for own, other in ((sa, sb), (sb, sa)):
            private = [c for c in own if c not in out and c not in other]
            if private or len(set(own)) != len(own):
                raise DimensionError(f"einsum: unsupported subscripts {subscripts!r}")
        self.subs = (sa, sb, out)
        try:
            return np.einsum(subscripts, a, b, optimize=True)
        except ValueError as e:
            raise DimensionError(
                f"einsum {subscripts!r}: operands {a.shape} and {b.shape} do not match"
            ) from e

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sa, sb, out = self.subs
        a, b = self.inputs
        ga = np.einsum(f"{out},{sb}->{sa}", grad, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", grad, a.data, optimize=True) if b.requires_grad else None
        return ga, gb


def einsum(subscripts: str, a: ArrayLike, b: ArrayLike) -> Tensor:
    return Einsum.apply(a, b, subscripts=subscripts)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``B×N`` @ ``N×M`` (+ ``M``)."""
    out = einsum("bn,nm->bm", x, weight)
    return out + bias if bias is not None else out


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D cross-correlation, BHWC input, ``Kh×Kw×Cin×Cout`` kernel.

    :raises DimensionError: Channel mismatch, bad ranks, or an empty output.
    """
    x, kernel = as_tensor(x), as_tensor(kernel, dtype=as_tensor(x).dtype)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(
            f"conv2d expects a 4-D input and kernel, got {x.shape} and {kernel.shape}"
        )
    if x.shape[3] != kernel.shape[2]:
        raise DimensionError(
            f"conv2d: input has {x.shape[3]} channels but kernel expects {kernel.shape[2]}"
        )
    if bias is not None and as_tensor(bias).shape != (kernel.shape[3],):
        raise DimensionError(
            f"conv2d: bias shape {as_tensor(bias).shape} does not match Cout={kernel.shape[3]}"
        )
    patches = extract_patches(x, kernel.shape[:2], stride=stride, padding=padding)
    out = einsum("bhwyxc,yxco->bhwo", patches, kernel)
    return out + bias if bias is not None else out


class TransposedConv2d(Function):
    """Overlap-add upsampling: every input pixel stamps a scaled kernel.

    Output extents are exactly ``stride × input``; a kernel larger than the
    stride spills over and is cropped ``(K - stride) // 2`` from the top/left,
    so ``conv2d(..., stride, 'same')`` of the result has the input's extents.
    """

    name = "transposed_conv2d"

    def forward(self, x: np.ndarray, k: np.ndarray, stride: int) -> np.ndarray:
        if stride < 1:
            raise DimensionError(f"stride must be >= 1, got {stride}")
        if x.ndim != 4 or k.ndim != 4:
            raise DimensionError(
                f"transposed_conv2d expects 4-D input and kernel, got {x.shape} and {k.shape}"
            )
        if x.shape[3] != k.shape[2]:
            raise DimensionError(
                f"transposed_conv2d: input has {x.shape[3]} channels but kernel expects {k.shape[2]}"
            )
        b, h, w, _ = x.shape
        kh, kw, _, cout = k.shape
        top = max(kh - stride, 0) // 2
        left = max(kw - stride, 0) // 2
        full_h = max((h - 1) * stride + kh, top + h * stride)
        full_w = max((w - 1) * stride + kw, left + w * stride)
        full = np.zeros((b, full_h, full_w, cout), dtype=x.dtype)
        for dy in range(kh):
            for dx in range(kw):
                full[:, dy:dy + (h - 1) * stride + 1:stride, dx:dx + (w - 1) * stride + 1:stride, :] += (
                    x @ k[dy, dx]
                )
        self.geometry = (stride, top, left, full.shape)
        return full[:, top:top + h * stride, left:left + w * stride, :].copy()

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, k = self.inputs
        stride, top, left, full_shape = self.geometry
        h, w = x.shape[1:3]
        kh, kw = k.shape[:2]
        gfull = np.zeros(full_shape, dtype=grad.dtype)
        gfull[:, top:top + grad.shape[1], left:left + grad.shape[2], :] = grad
        gx = np.zeros_like(x.data)
        gk = np.zeros_like(k.data)
        for dy in range(kh):
            for dx in range(kw):
                window = gfull[:, dy:dy + (h - 1) * stride + 1:stride, dx:dx + (w - 1) * stride + 1:stride, :]
                gx += window @ k.data[dy, dx].T
                gk[dy, dx] = np.einsum("bhwc,bhwo->co", x.data, window, optimize=True)
        return gx, gk


def transposed_conv2d(x: Tensor, kernel: Tensor, stride: int = 2, bias: Tensor | None = None) -> Tensor:
    out = TransposedConv2d.apply(x, kernel, stride=stride)
    return out + bias if bias is not None else out


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


class Relu(Function):
    name = "relu"

    def forward(self, a: np.ndarray) -> np.ndarray:
        return np.maximum(a, 0)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * (self.inputs[0].data > 0),)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a: np.ndarray) -> np.ndarray:
        self.out = np.where(a >= 0, 1.0 / (1.0 + np.exp(-np.abs(a))),
                            np.exp(-np.abs(a)) / (1.0 + np.exp(-np.abs(a)))).astype(a.dtype)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.out * (1 - self.out),)


class Log(Function):
    name = "log"

    def forward(self, a: np.ndarray) -> np.ndarray:
        return np.log(a)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad / self.inputs[0].data,)


class Clip(Function):
    """Clamp to ``[low, high]``; gradient passes only strictly inside."""

    name = "clip"

    def forward(self, a: np.ndarray, low: float, high: float) -> np.ndarray:
        self.mask = (a > low) & (a < high)
        return np.clip(a, low, high)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.mask,)


class L2Norm(Function):
    """Euclidean norm over the last axis; gradient is 0 at the zero vector."""

    name = "l2norm"

    def forward(self, a: np.ndarray) -> np.ndarray:
        self.norm = np.sqrt(np.sum(a * a, axis=-1))
        return self.norm

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        a = self.inputs[0].data
        safe = np.where(self.norm > 0, self.norm, 1)
        scale = np.where(self.norm > 0, grad / safe, 0)
        return (a * scale[..., None],)


class Squash(Function):
    """``v = |s|² / (1 + |s|²) · s / |s|`` over the last axis, ``squash(0) = 0``."""

    name = "squash"

    def forward(self, s: np.ndarray) -> np.ndarray:
        sq = np.sum(s * s, axis=-1, keepdims=True)
        self.norm = np.sqrt(sq)
        self.sq = sq
        return s * (self.norm / (1 + sq))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        s = self.inputs[0].data
        n, sq = self.norm, self.sq
        f = n / (1 + sq)
        safe = np.where(n > 0, n, 1)
        df_over_n = np.where(n > 0, (1 - sq) / ((1 + sq) ** 2) / safe, 0)
        radial = np.sum(s * grad, axis=-1, keepdims=True)
        return (grad * f + s * radial * df_over_n,)


class Softmax(Function):
    name = "softmax"

    def forward(self, a: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        shifted = a - np.max(a, axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / np.sum(e, axis=axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        s = self.out
        return (s * (grad - np.sum(grad * s, axis=self.axis, keepdims=True)),)


def relu(x: ArrayLike) -> Tensor:
    return Relu.apply(x)


def sigmoid(x: ArrayLike) -> Tensor:
    return Sigmoid.apply(x)


def log(x: ArrayLike) -> Tensor:
    return Log.apply(x)


def clip(x: ArrayLike, low: float, high: float) -> Tensor:
    return Clip.apply(x, low=low, high=high)


def l2norm(x: ArrayLike) -> Tensor:
    return L2Norm.apply(x)


def squash(x: ArrayLike) -> Tensor:
    return Squash.apply(x)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


_ELEMENTWISE: dict[str, Callable[..., Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "add": lambda a, b: as_tensor(a) + b,
    "mul": lambda a, b: as_tensor(a) * b,
    "mean": lambda a, axis=None: as_tensor(a).mean(axis=axis),
    "sum": lambda a, axis=None: as_tensor(a).sum(axis=axis),
    "l2norm": l2norm,
}


def elementwise(fn: str, x: ArrayLike, *args: Any, **kwargs: Any) -> Tensor:
    """Dispatch one of ``relu, sigmoid, add, mul, mean, sum, l2norm`` by name."""
    try:
        op = _ELEMENTWISE[fn]
    except KeyError:
        raise DimensionError(f"unknown elementwise op {fn!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return op(x, *args, **kwargs)

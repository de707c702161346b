"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array (row-major, BHWC for images) and remembers
the ``Function`` that produced it. ``backward(loss)`` walks the recorded
graph in reverse topological order and accumulates ``d loss / d leaf`` into
every leaf that requires a gradient. Tensors are never modified in place
by operations; the only mutation is gradient accumulation into leaves and
the optimizer update of ``Parameter`` values.

Floating point width follows the data: float64 in tests and gradient
checks, float32 for training (see ``dcaps.network.model.build``).
"""

from __future__ import annotations

import contextlib
import logging
from collections.abc import Iterable, Iterator, Sequence
from typing import Any, ClassVar, Union

import numpy as np

from dcaps.core.errors import DimensionError, NumericalError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]

# Analytic-gradient faults injected by the gradcheck negative control.
# Maps Function.name -> multiplicative corruption of its input gradients.
_GRADIENT_FAULTS: dict[str, float] = {}


@contextlib.contextmanager
def gradient_fault(op_name: str, scale: float = 1.5) -> Iterator[None]:
    """Scale every input gradient of ``op_name`` by ``scale`` inside the block."""
    _GRADIENT_FAULTS[op_name] = scale
    try:
        yield
    finally:
        _GRADIENT_FAULTS.pop(op_name, None)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out the axes numpy broadcasting added or stretched to reach ``grad.shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """One differentiable operation node.

    Subclasses implement ``forward`` on raw arrays and ``backward`` that maps
    ``d loss / d output`` to one gradient per input (``None`` for inputs that
    never need one). ``apply`` wires the result into the graph.
    """

    name: ClassVar[str] = "function"

    def __init__(self, *inputs: Tensor) -> None:
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs: Any) -> Tensor:
        like = next((x for x in inputs if isinstance(x, Tensor)), None)
        dtype = like.dtype if like is not None else None
        tensors = tuple(as_tensor(x, dtype=dtype) for x in inputs)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, creator=fn if requires_grad else None)


class Tensor:
    """Immutable n-dimensional real array with an optional gradient buffer."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        creator: Function | None = None,
        dtype: np.dtype | type | None = None,
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.creator = creator
        self.grad: np.ndarray | None = None

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other: ArrayLike) -> Tensor:
        return Add.apply(self, other)

    def __radd__(self, other: ArrayLike) -> Tensor:
        return Add.apply(other, self)

    def __sub__(self, other: ArrayLike) -> Tensor:
        return Sub.apply(self, other)

    def __rsub__(self, other: ArrayLike) -> Tensor:
        return Sub.apply(other, self)

    def __mul__(self, other: ArrayLike) -> Tensor:
        return Mul.apply(self, other)

    def __rmul__(self, other: ArrayLike) -> Tensor:
        return Mul.apply(other, self)

    def __truediv__(self, other: ArrayLike) -> Tensor:
        return Div.apply(self, other)

    def __rtruediv__(self, other: ArrayLike) -> Tensor:
        return Div.apply(other, self)

    def __neg__(self) -> Tensor:
        return Neg.apply(self)

    def __getitem__(self, index: Any) -> Tensor:
        return GetItem.apply(self, index=index)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int | Sequence[int]) -> Tensor:
        if len(shape) == 1 and not isinstance(shape[0], int):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def transpose(self, *axes: int) -> Tensor:
        return Transpose.apply(self, axes=tuple(axes) if axes else None)

    def backward(self) -> None:
        backward(self)


def as_tensor(value: ArrayLike, dtype: np.dtype | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


class Parameter:
    """A named, trainable leaf tensor.

    ``name`` is a dotted path unique within a network (``"caps2.transform"``).
    """

    def __init__(self, name: str, value: np.ndarray) -> None:
        self.name = name
        self.value = Tensor(np.array(value, copy=True), requires_grad=True)
        self.value.zero_grad()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def grad(self) -> np.ndarray:
        if self.value.grad is None:
            self.value.zero_grad()
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.zero_grad()

    def assign(self, array: np.ndarray) -> None:
        """Overwrite the value in place; shape and dtype must not change."""
        array = np.asarray(array)
        if array.shape != self.shape:
            raise DimensionError(
                f"parameter {self.name}: cannot assign shape {array.shape} to {self.shape}"
            )
        self.value.data[...] = array

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def count_parameters(params: Iterable[Parameter]) -> int:
    """Total number of scalars across ``params``."""
    return sum(int(np.prod(p.shape, dtype=np.int64)) for p in params)


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require grad, inputs before outputs."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def function_names() -> set[str]:
    """``name`` of every ``Function`` subclass defined so far."""
    names: set[str] = set()
    pending = list(Function.__subclasses__())
    while pending:
        cls = pending.pop()
        names.add(cls.name)
        pending.extend(cls.__subclasses__())
    return names


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into ``.grad`` of every reachable leaf.

    :raises DimensionError: ``loss`` is not a scalar.
    :raises NumericalError: ``loss`` is NaN or infinite.
    """
    if loss.size != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericalError(f"backward() called on a non-finite loss ({loss.item()})")
    if not loss.requires_grad:
        return

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.creator is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += grad
            continue
        fn = node.creator
        input_grads = fn.backward(grad)
        scale = _GRADIENT_FAULTS.get(fn.name)
        for parent, g in zip(fn.inputs, input_grads, strict=True):
            if g is None or not parent.requires_grad:
                continue
            if scale is not None:
                g = g * scale
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = np.asarray(g, dtype=parent.dtype)


# ---------------------------------------------------------------------------
# Arithmetic and shape functions
# ---------------------------------------------------------------------------


def _broadcast_check(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from e


class Add(Function):
    name = "add"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _broadcast_check(a, b, self.name)
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)


class Sub(Function):
    name = "sub"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _broadcast_check(a, b, self.name)
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)


class Mul(Function):
    name = "mul"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _broadcast_check(a, b, self.name)
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        return unbroadcast(grad * b.data, a.shape), unbroadcast(grad * a.data, b.shape)


class Div(Function):
    name = "div"

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _broadcast_check(a, b, self.name)
        return a / b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        ga = grad / b.data
        gb = -grad * a.data / (b.data * b.data)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


class Neg(Function):
    name = "neg"

    def forward(self, a: np.ndarray) -> np.ndarray:
        return -a

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (-grad,)


def _expand_reduced(grad: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(grad.reshape((1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, shape)


class Sum(Function):
    name = "sum"

    def forward(self, a: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
        self.axis, self.keepdims = axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        (a,) = self.inputs
        return (_expand_reduced(grad, a.shape, self.axis, self.keepdims).copy(),)


class Mean(Function):
    name = "mean"

    def forward(self, a: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
        self.axis, self.keepdims = axis, keepdims
        out = np.asarray(a.mean(axis=axis, keepdims=keepdims))
        self.count = a.size // max(out.size, 1)
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        (a,) = self.inputs
        return (_expand_reduced(grad, a.shape, self.axis, self.keepdims) / self.count,)


class Reshape(Function):
    name = "reshape"

    def forward(self, a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        try:
            return a.reshape(shape)
        except ValueError as e:
            raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from e

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(self.inputs[0].shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, a: np.ndarray, axes: tuple[int, ...] | None) -> np.ndarray:
        self.axes = axes if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.transpose(grad, np.argsort(self.axes)),)


class GetItem(Function):
    name = "getitem"

    def forward(self, a: np.ndarray, index: Any) -> np.ndarray:
        self.index = index
        return np.array(a[index], copy=True)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        (a,) = self.inputs
        out = np.zeros_like(a.data)
        np.add.at(out, self.index, grad)
        return (out,)

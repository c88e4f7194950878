"""Dense 64-bit tensors with tape-based reverse-mode differentiation.

Every differentiable primitive is a ``Function`` subclass with a ``forward``
working on NumPy arrays and a ``backward`` returning one gradient per input.
``Function.apply`` records the call on the output tensor; ``backward`` walks
the recorded graph in reverse topological order.

Implicit broadcasting is limited to two cases: a 0-d scalar against any
tensor, and a 1-d vector against the trailing axis of a tensor (a bias added
to every row). Anything else is a ``DimensionError`` naming both shapes.

Numerically stable forms used by the primitives::

    softmax(x)     = exp(x - max(x)) / sum(exp(x - max(x)))
    log_softmax(x) = x - max(x) - log(sum(exp(x - max(x))))
    softplus(x)    = max(x, 0) + log1p(exp(-|x|))
    sigmoid(x)     = 1 / (1 + exp(-x))       for x >= 0
                   = exp(x) / (1 + exp(x))   for x < 0
"""

from __future__ import annotations

import contextlib
from collections.abc import Iterator, Sequence
from contextvars import ContextVar
from typing import Any

import numpy as np

from engine.errors import ContractError, DimensionError, NumericError

_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (per thread / task)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    """Return whether new operations are recorded for backward."""
    return _grad_enabled.get()


class Function:
    """Base class for differentiable operations."""

    def __init__(self, *inputs: Tensor) -> None:
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **options: Any) -> np.ndarray:
        """Compute the output array from the input arrays."""
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        """Map the output gradient to one gradient per input."""
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **options: Any) -> Tensor:
        """Run the forward pass and record the call when gradients are needed."""
        fn = cls(*inputs)
        data = fn.forward(*(t.data for t in inputs), **options)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
        return Tensor._wrap(data, requires_grad, fn if requires_grad else None)


class Tensor:
    """A shape-tagged float64 array with an optional gradient buffer.

    Attributes:
        data: Row-major float64 values
        requires_grad: Whether backward should populate ``grad``
        grad: Accumulated gradient with the same shape as ``data``
    """

    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._fn: Function | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool, fn: Function | None) -> Tensor:
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.requires_grad = requires_grad
        out.grad = None
        out._fn = fn
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {list(self.shape)}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> Tensor:
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, shape)

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: Any) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"


def as_tensor(value: Any) -> Tensor:
    """Return ``value`` unchanged if it is a Tensor, else wrap it as a constant."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        if node._fn is not None:
            for parent in node._fn.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every reachable tensor.

    Gradients add onto whatever ``grad`` already holds, so repeated calls
    without zeroing accumulate.

    Raises:
        ContractError: If ``root`` is not a single element or does not require grad
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {list(root.shape)}")
    if not root.requires_grad:
        raise ContractError("backward root does not depend on any tensor requiring grad")

    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_topological_order(root)):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        node.grad = grad.copy() if node.grad is None else node.grad + grad
        if node._fn is None:
            continue
        for parent, parent_grad in zip(node._fn.inputs, node._fn.backward(grad), strict=True):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


# -- broadcasting -----------------------------------------------------------


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...], op: str) -> tuple[int, ...]:
    if a == b:
        return a
    if a == ():
        return b
    if b == ():
        return a
    if len(a) == 1 and len(b) >= 1 and b[-1] == a[0]:
        return b
    if len(b) == 1 and len(a) >= 1 and a[-1] == b[0]:
        return a
    raise DimensionError(f"{op}: incompatible shapes {list(a)} and {list(b)}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    return grad.reshape(-1, shape[0]).sum(axis=0)


class _Binary(Function):
    name = "binary"

    def forward(self, a: np.ndarray, b: np.ndarray, **options: Any) -> np.ndarray:
        _broadcast_shape(a.shape, b.shape, self.name)
        self.a, self.b = a, b
        return self.compute(a, b)

    def compute(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Add(_Binary):
    name = "add"

    def compute(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return _unbroadcast(grad, self.a.shape), _unbroadcast(grad, self.b.shape)


class Sub(_Binary):
    name = "sub"

    def compute(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return _unbroadcast(grad, self.a.shape), _unbroadcast(-grad, self.b.shape)


class Mul(_Binary):
    name = "mul"

    def compute(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (
            _unbroadcast(grad * self.b, self.a.shape),
            _unbroadcast(grad * self.a, self.b.shape),
        )


class Div(_Binary):
    name = "div"

    def compute(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a / b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (
            _unbroadcast(grad / self.b, self.a.shape),
            _unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape),
        )


class Neg(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        return -x

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (-grad,)


class MatMul(Function):
    """Matrix product with an optional leading batch axis on either side."""

    def forward(self, a: np.ndarray, b: np.ndarray, **options: Any) -> np.ndarray:
        if a.ndim not in (2, 3) or b.ndim not in (2, 3):
            raise DimensionError(
                f"matmul: expected 2-d or 3-d operands, got {list(a.shape)} and {list(b.shape)}"
            )
        batch_mismatch = a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]
        if a.shape[-1] != b.shape[-2] or batch_mismatch:
            raise DimensionError(
                f"matmul: incompatible shapes {list(a.shape)} and {list(b.shape)}"
            )
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        a, b = self.a, self.b
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        if a.ndim == 2 and grad_a.ndim == 3:
            grad_a = grad_a.sum(axis=0)
        if b.ndim == 2 and grad_b.ndim == 3:
            grad_b = grad_b.sum(axis=0)
        return grad_a, grad_b


class Transpose(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        if x.ndim < 2:
            raise DimensionError(f"transpose: needs at least 2 axes, got {list(x.shape)}")
        return np.swapaxes(x, -1, -2)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (np.swapaxes(grad, -1, -2),)


class Reshape(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        shape = tuple(options["shape"])
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as err:
            raise DimensionError(
                f"reshape: cannot view {list(x.shape)} as {list(shape)}"
            ) from err

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad.reshape(self.in_shape),)


class Exp(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        self.out = np.exp(x)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * self.out,)


class Log(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        if np.any(x <= 0.0):
            raise NumericError("log: input must be strictly positive")
        self.x = x
        return np.log(x)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad / self.x,)


class ReLU(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        self.active = x > 0.0
        return np.where(self.active, x, 0.0)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * self.active,)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0.0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return out


class Sigmoid(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        self.out = _stable_sigmoid(x)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * self.out * (1.0 - self.out),)


class Softplus(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        self.x = x
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * _stable_sigmoid(self.x),)


def _expand_reduced(
    grad: np.ndarray, shape: tuple[int, ...], axis: int | None, keepdims: bool
) -> np.ndarray:
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape).copy()


class Sum(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        self.axis = options.get("axis")
        self.keepdims = bool(options.get("keepdims", False))
        self.in_shape = x.shape
        return np.asarray(x.sum(axis=self.axis, keepdims=self.keepdims))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (_expand_reduced(grad, self.in_shape, self.axis, self.keepdims),)


class Mean(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        self.axis = options.get("axis")
        self.keepdims = bool(options.get("keepdims", False))
        self.in_shape = x.shape
        self.count = x.size if self.axis is None else x.shape[self.axis]
        return np.asarray(x.mean(axis=self.axis, keepdims=self.keepdims))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        expanded = _expand_reduced(grad, self.in_shape, self.axis, self.keepdims)
        return (expanded / self.count,)


def _require_finite(x: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{op}: input contains non-finite values")


class Softmax(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        _require_finite(x, "softmax")
        self.axis = int(options.get("axis", -1))
        shifted = np.exp(x - x.max(axis=self.axis, keepdims=True))
        self.out = shifted / shifted.sum(axis=self.axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


class LogSoftmax(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        _require_finite(x, "log_softmax")
        self.axis = int(options.get("axis", -1))
        shifted = x - x.max(axis=self.axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=self.axis, keepdims=True))
        self.probs = np.exp(out)
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad - self.probs * grad.sum(axis=self.axis, keepdims=True),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, **options: Any) -> np.ndarray:
        self.axis = int(options.get("axis", 0))
        try:
            out = np.concatenate(arrays, axis=self.axis)
        except ValueError as err:
            shapes = [list(a.shape) for a in arrays]
            raise DimensionError(f"concat: incompatible shapes {shapes}") from err
        self.splits = np.cumsum([a.shape[self.axis] for a in arrays])[:-1]
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Gather(Function):
    """Select positions ``index`` along ``axis`` (rows, columns, nodes)."""

    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        self.axis = int(options.get("axis", 0))
        self.index = np.asarray(options["index"], dtype=np.int64)
        self.in_shape = x.shape
        extent = x.shape[self.axis]
        if self.index.size and (self.index.min() < -extent or self.index.max() >= extent):
            raise DimensionError(
                f"gather: index out of range for axis {self.axis} of {list(x.shape)}"
            )
        return np.take(x, self.index, axis=self.axis)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        out = np.zeros(self.in_shape)
        np.add.at(np.moveaxis(out, self.axis, 0), self.index, np.moveaxis(grad, self.axis, 0))
        return (out,)


class L2Normalize(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        self.norm = np.linalg.norm(x, axis=-1, keepdims=True)
        if np.any(self.norm == 0.0):
            raise NumericError("l2_normalize: zero-norm vector")
        self.out = x / self.norm
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        inner = (grad * self.out).sum(axis=-1, keepdims=True)
        return ((grad - self.out * inner) / self.norm,)


class RowMax(Function):
    """Maximum along the last axis; ties route the gradient to the first maximum."""

    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        self.in_shape = x.shape
        self.argmax = np.argmax(x, axis=-1)[..., None]
        return np.take_along_axis(x, self.argmax, axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        out = np.zeros(self.in_shape)
        np.put_along_axis(out, self.argmax, grad[..., None], axis=-1)
        return (out,)


class ScaleRows(Function):
    """Multiply row ``m`` of ``x`` (shape ``[..., M, d]``) by ``s[..., m]``."""

    def forward(self, x: np.ndarray, s: np.ndarray, **options: Any) -> np.ndarray:
        if x.shape[:-1] != s.shape:
            raise DimensionError(
                f"scale_rows: incompatible shapes {list(x.shape)} and {list(s.shape)}"
            )
        self.x, self.s = x, s
        return x * s[..., None]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return grad * self.s[..., None], (grad * self.x).sum(axis=-1)


class RowNormalize(Function):
    """Divide each row by its sum; all-zero rows stay zero."""

    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        if np.any(x < 0.0):
            raise ContractError("row_normalize: entries must be non-negative")
        totals = x.sum(axis=-1, keepdims=True)
        self.positive = totals > 0.0
        self.safe = np.where(self.positive, totals, 1.0)
        self.out = np.where(self.positive, x / self.safe, 0.0)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        inner = (grad * self.out).sum(axis=-1, keepdims=True)
        return (np.where(self.positive, (grad - inner) / self.safe, 0.0),)


class ClampMin(Function):
    def forward(self, x: np.ndarray, **options: Any) -> np.ndarray:
        floor = float(options["floor"])
        self.kept = x > floor
        return np.where(self.kept, x, floor)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * self.kept,)


# -- functional surface -----------------------------------------------------


def add(a: Any, b: Any) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a: Any, b: Any) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a: Any, b: Any) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


def div(a: Any, b: Any) -> Tensor:
    return Div.apply(as_tensor(a), as_tensor(b))


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply every entry by a Python scalar."""
    return Mul.apply(x, Tensor(float(factor)))


def neg(x: Tensor) -> Tensor:
    return Neg.apply(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; either operand may carry a leading batch axis."""
    return MatMul.apply(a, b)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return Transpose.apply(x)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def softplus(x: Tensor) -> Tensor:
    return Softplus.apply(x)


def reduce_sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def reduce_mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def gather(x: Tensor, index: Sequence[int] | np.ndarray, axis: int = 0) -> Tensor:
    return Gather.apply(x, index=index, axis=axis)


def l2_normalize(x: Tensor) -> Tensor:
    """Scale every vector along the last axis to unit Euclidean norm."""
    return L2Normalize.apply(x)


def row_max(x: Tensor) -> Tensor:
    return RowMax.apply(x)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    return ScaleRows.apply(x, s)


def row_normalize(x: Tensor) -> Tensor:
    return RowNormalize.apply(x)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    return ClampMin.apply(x, floor=floor)

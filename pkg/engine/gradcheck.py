"""Central finite-difference checks of reverse-mode gradients.

Entrywise relative error is ``|a - n| / max(|a|, |n|, 1e-2)`` where ``a`` is the
reverse-mode gradient and ``n`` the central difference
``(f(x + h) - f(x - h)) / 2h``. A check passes when the worst entry stays
below the tolerance.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np
from pydantic import BaseModel, Field

from engine import tensor as T
from engine.tensor import Tensor, no_grad

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
ERROR_FLOOR = 1e-2


class GradCheckResult(BaseModel):
    """Outcome of one gradient check."""

    name: str = Field(..., description="Operation or composite under test")
    passed: bool
    max_error: float = Field(..., description="Worst entrywise relative error")
    location: str | None = Field(
        None, description="Tensor name and index of the worst entry", examples=["x[1, 0]"]
    )
    checked: int = Field(..., description="Number of entries compared")


def check_leaves(
    name: str,
    loss_fn: Callable[[], Tensor],
    leaves: Sequence[tuple[str, Tensor]],
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    corrupt: bool = False,
) -> GradCheckResult:
    """Compare reverse-mode and finite-difference gradients for named leaves.

    ``loss_fn`` must rebuild the scalar from the current ``data`` of every
    leaf each time it is called. Leaves are perturbed in place and restored.

    Args:
        corrupt: Add 1.0 to the first analytic entry (negative control)
    """
    for _, leaf in leaves:
        leaf.grad = None
    loss_fn().backward()
    analytic = [
        leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data)
        for _, leaf in leaves
    ]
    if corrupt and analytic and analytic[0].size:
        analytic[0].reshape(-1)[0] += 1.0

    worst = 0.0
    worst_at: str | None = None
    checked = 0
    with no_grad():
        for (leaf_name, leaf), grad in zip(leaves, analytic, strict=True):
            leaf.data = np.ascontiguousarray(leaf.data)
            flat = leaf.data.reshape(-1)
            for flat_index in range(flat.size):
                original = flat[flat_index]
                flat[flat_index] = original + step
                plus = loss_fn().item()
                flat[flat_index] = original - step
                minus = loss_fn().item()
                flat[flat_index] = original
                numeric = (plus - minus) / (2.0 * step)
                exact = grad.reshape(-1)[flat_index]
                denom = max(abs(exact), abs(numeric), ERROR_FLOOR)
                error = abs(exact - numeric) / denom
                checked += 1
                if error > worst or worst_at is None:
                    worst = error
                    index = np.unravel_index(flat_index, leaf.data.shape)
                    worst_at = f"{leaf_name}[{', '.join(str(int(i)) for i in index)}]"
    for _, leaf in leaves:
        leaf.grad = None
    return GradCheckResult(
        name=name,
        passed=worst < tolerance,
        max_error=float(worst),
        location=worst_at,
        checked=checked,
    )


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.reduce_sum(T.mul(out, Tensor(weights)))


OpCase = tuple[Callable[[list[Tensor]], Tensor], list[np.ndarray]]
OpBuilder = Callable[[np.random.Generator], OpCase]


def _unary(
    op: Callable[[Tensor], Tensor], low: float = -2.0, high: float = 2.0
) -> OpBuilder:
    def build(rng: np.random.Generator) -> OpCase:
        x = rng.uniform(low, high, size=(3, 4))
        return (lambda ts: op(ts[0])), [x]

    return build


def _binary(
    op: Callable[[Tensor, Tensor], Tensor], shape_b: tuple[int, ...] = (3, 4)
) -> OpBuilder:
    def build(rng: np.random.Generator) -> OpCase:
        a = rng.uniform(-2.0, 2.0, size=(3, 4))
        b = rng.uniform(-2.0, 2.0, size=shape_b)
        return (lambda ts: op(ts[0], ts[1])), [a, b]

    return build


def _divide(rng: np.random.Generator) -> OpCase:
    a = rng.uniform(-2.0, 2.0, size=(3, 4))
    b = rng.uniform(0.5, 2.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
    return (lambda ts: T.div(ts[0], ts[1])), [a, b]


def _matmul(shape_a: tuple[int, ...], shape_b: tuple[int, ...]) -> OpBuilder:
    def build(rng: np.random.Generator) -> OpCase:
        a = rng.uniform(-2.0, 2.0, size=shape_a)
        b = rng.uniform(-2.0, 2.0, size=shape_b)
        return (lambda ts: T.matmul(ts[0], ts[1])), [a, b]

    return build


def _concat(rng: np.random.Generator) -> OpCase:
    a = rng.uniform(-2.0, 2.0, size=(2, 3))
    b = rng.uniform(-2.0, 2.0, size=(2, 2))
    return (lambda ts: T.concat(ts, axis=1)), [a, b]


def _scale_rows(rng: np.random.Generator) -> OpCase:
    x = rng.uniform(-2.0, 2.0, size=(2, 3, 4))
    s = rng.uniform(-2.0, 2.0, size=(2, 3))
    return (lambda ts: T.scale_rows(ts[0], ts[1])), [x, s]


OP_SUITES: dict[str, OpBuilder] = {
    "add": _binary(T.add),
    "add_bias": _binary(T.add, shape_b=(4,)),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "div": _divide,
    "scale": _unary(lambda x: T.scale(x, -1.5)),
    "matmul": _matmul((3, 4), (4, 2)),
    "matmul_batched": _matmul((2, 3, 4), (2, 4, 2)),
    "matmul_shared_right": _matmul((2, 3, 4), (4, 2)),
    "matmul_shared_left": _matmul((3, 4), (2, 4, 2)),
    "transpose": _unary(T.transpose),
    "reshape": _unary(lambda x: T.reshape(x, (4, 3))),
    "exp": _unary(T.exp),
    "log": _unary(T.log, low=0.5, high=2.0),
    "relu": _unary(T.relu),
    "sigmoid": _unary(T.sigmoid),
    "softplus": _unary(T.softplus),
    "sum": _unary(lambda x: T.reduce_sum(x, axis=0)),
    "mean": _unary(lambda x: T.reduce_mean(x, axis=1)),
    "softmax": _unary(lambda x: T.softmax(x, axis=-1)),
    "log_softmax": _unary(lambda x: T.log_softmax(x, axis=-1)),
    "concat": _concat,
    "gather_rows": _unary(lambda x: T.gather(x, [2, 0, 2], axis=0)),
    "gather_columns": _unary(lambda x: T.gather(x, [1, 3], axis=1)),
    "l2_normalize": _unary(T.l2_normalize),
    "row_max": _unary(T.row_max),
    "scale_rows": _scale_rows,
    "row_normalize": _unary(T.row_normalize, low=0.1, high=2.0),
    "clamp_min": _unary(lambda x: T.clamp_min(x, 0.0)),
}


def check_op(
    name: str,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    corrupt: bool = False,
) -> GradCheckResult:
    """Run the finite-difference suite of one registered primitive.

    Raises:
        KeyError: If ``name`` is not a registered suite
    """
    rng = np.random.default_rng(seed)
    fn, arrays = OP_SUITES[name](rng)
    leaves = [
        (f"x{index}", Tensor(array, requires_grad=True)) for index, array in enumerate(arrays)
    ]
    tensors = [leaf for _, leaf in leaves]
    with no_grad():
        out_shape = fn(tensors).shape
    weights = rng.uniform(-1.0, 1.0, size=out_shape)
    return check_leaves(
        name,
        lambda: _project(fn(tensors), weights),
        leaves,
        step=step,
        tolerance=tolerance,
        corrupt=corrupt,
    )

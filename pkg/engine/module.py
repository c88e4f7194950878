"""Parameter containers and the affine building block used by every model part."""

from __future__ import annotations

from collections.abc import Iterator
from typing import Any

import numpy as np

from engine.errors import ContractError, DimensionError
from engine.tensor import Tensor, add, matmul


class Parameter(Tensor):
    """A trainable leaf tensor with a dotted name assigned by its owning module."""

    def __init__(self, data: Any, name: str = "") -> None:
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={list(self.shape)})"


class Module:
    """Base class for anything that owns parameters.

    Parameters are discovered by walking instance attributes in definition
    order: ``Parameter`` values, nested ``Module`` values and lists of either.
    Names are dotted attribute paths such as ``dca.value_heads.2.weight``.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for name, param in self._walk(prefix):
            if id(param) in seen:
                continue
            seen.add(id(param))
            param.name = name
            yield name, param

    def _walk(self, prefix: str) -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            yield from _walk_value(path, value)

    def parameters(self) -> list[Parameter]:
        return [param for _, param in self.named_parameters()]

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        """Copy every parameter value keyed by its dotted name."""
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place.

        Raises:
            ContractError: If a parameter is missing from ``state``
            DimensionError: If a stored array has the wrong shape
        """
        for name, param in self.named_parameters():
            if name not in state:
                raise ContractError(f"state is missing parameter '{name}'")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.data.shape:
                raise DimensionError(
                    f"parameter '{name}': expected {list(param.shape)}, got {list(value.shape)}"
                )
            param.data = value.copy()


def _walk_value(path: str, value: Any) -> Iterator[tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value._walk(f"{path}.")
    elif isinstance(value, list | tuple):
        for index, item in enumerate(value):
            yield from _walk_value(f"{path}.{index}", item)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    """Affine map ``x @ weight + bias`` with ``weight`` stored as in x out."""

    def __init__(
        self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True
    ) -> None:
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(xavier_uniform(rng, in_features, out_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        return add(out, self.bias) if self.bias is not None else out

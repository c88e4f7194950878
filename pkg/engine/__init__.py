"""Tensor engine: 64-bit dense tensors with reverse-mode differentiation."""

from engine.module import Linear, Module, Parameter
from engine.optim import AdamW, WarmupCosineSchedule
from engine.tensor import Function, Tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "AdamW",
    "Function",
    "Linear",
    "Module",
    "Parameter",
    "Tensor",
    "WarmupCosineSchedule",
    "backward",
    "is_grad_enabled",
    "no_grad",
]

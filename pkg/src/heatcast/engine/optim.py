"""Trainable parameters, initialisation, RMSProp and critic weight clipping."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .tensor import DTYPE, NumericalError, Tensor


class Parameter(Tensor):
    """A named leaf tensor with a gradient slot and an RMSProp accumulator.

    The optimizer is the only writer of ``data``; ``steps`` counts applied updates.
    """

    __slots__ = ("name", "accumulator", "steps")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.accumulator = np.zeros_like(self.data)
        self.steps = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)); conv fans include the kernel area."""
    if len(shape) == 2:
        fan_out, fan_in = shape
    else:
        receptive = int(np.prod(shape[2:]))
        fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


def rmsprop_step(param: Parameter, lr: float, rho: float = 0.9, eps: float = 1e-8) -> Parameter:
    """One RMSProp update, in place. The gradient is cleared afterwards.

    acc <- rho*acc + (1-rho)*g^2 ;  value <- value - lr*g / (sqrt(acc) + eps)
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if eps < 0.0:
        raise ValueError("eps must be non-negative")
    g = param.grad if param.grad is not None else np.zeros_like(param.data)
    if not np.isfinite(g).all():
        raise NumericalError(f"non-finite gradient for parameter {param.name!r}")
    acc = rho * param.accumulator + (1.0 - rho) * g * g
    denom = np.sqrt(acc) + eps
    update = np.divide(lr * g, denom, out=np.zeros_like(g), where=denom > 0)
    value = param.data - update
    if not np.isfinite(value).all():
        raise NumericalError(f"update produced non-finite values for parameter {param.name!r}")
    param.accumulator = acc
    param.data = value
    param.grad = None
    param.steps += 1
    return param


def clip_weights(params: Iterable[Parameter], c: float) -> None:
    """Clamp every value of every parameter into ``[-c, c]`` in place."""
    if c <= 0:
        raise ValueError("clip constant must be positive")
    for p in params:
        np.clip(p.data, -c, c, out=p.data)


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None

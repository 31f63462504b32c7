"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    eps: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
    one_sided_fallback: bool = False,
) -> float:
    """Worst relative error between backprop and central differences.

    ``fn(*inputs)`` may return any shape; it is reduced to a scalar by a fixed
    random projection so every output coordinate is exercised. With ``max_coords``
    each input is probed at that many randomly chosen coordinates instead of all.
    The relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.

    ``one_sided_fallback`` is for functions with kinks (SELU at 0, pooling ties):
    when the probe straddles a kink, the analytic value is the derivative on one
    side, so each coordinate scores the best of the central, forward and backward
    differences. Pooling and SELU layers fed by a shared bias can put kinks on
    both sides of the probe, so the three differences are also retried at
    ``eps / 10``. On smooth stretches all of them agree to O(eps), so a wrong
    gradient still fails.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    rng = np.random.default_rng(seed)
    saved_flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)

    out = fn(*inputs)
    projection = rng.standard_normal(out.shape)
    (out * Tensor(projection)).sum().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def rel(a: float, n: float) -> float:
        return abs(a - n) / max(abs(a), abs(n), floor)

    def objective() -> float:
        with no_grad():
            return float((fn(*inputs).data * projection).sum())

    def probe(flat: np.ndarray, i: int, step: float) -> tuple[float, float]:
        original = flat[i]
        flat[i] = original + step
        plus = objective()
        flat[i] = original - step
        minus = objective()
        flat[i] = original
        return plus, minus

    worst = 0.0
    try:
        for t, grad in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            for i in coords:
                original = flat[i]
                a = grad.reshape(-1)[i]
                plus, minus = probe(flat, i, eps)
                err = rel(a, (plus - minus) / (2.0 * eps))
                if one_sided_fallback and err > 0:
                    center = objective()
                    for step in (eps, eps / 10):
                        if step != eps:
                            plus, minus = probe(flat, i, step)
                            err = min(err, rel(a, (plus - minus) / (2.0 * step)))
                        err = min(err, rel(a, (plus - center) / step), rel(a, (center - minus) / step))
                worst = max(worst, err)
    finally:
        for t, flag in zip(inputs, saved_flags):
            t.requires_grad = flag
            t.grad = None
    return worst

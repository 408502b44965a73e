"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_difference_check(function: Callable[[], Tensor], parameters: Sequence[Tensor],
                            step: float = 1e-5, coords: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``function`` must rebuild its graph from the current parameter values on every
    call and return a scalar. ``coords`` limits the check to that many randomly
    chosen coordinates per parameter (all coordinates when ``None``).
    """
    for p in parameters:
        p.grad = None
    out = function()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in parameters]
    for p in parameters:
        p.grad = None

    worst = 0.0
    for p, ga in zip(parameters, analytic):
        flat = p.data.reshape(-1)
        if coords is None or coords >= flat.size:
            picks = range(flat.size)
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            picks = rng.choice(flat.size, size=coords, replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            fp = function().item()
            flat[i] = orig - step
            fm = function().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            a = ga.reshape(-1)[i]
            err = abs(a - num) / (abs(a) + abs(num) + 1e-12)
            worst = max(worst, err)
    return worst

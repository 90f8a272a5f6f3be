"""Finite-difference verification of tape gradients.

The oracle is central differencing of the forward value: it never touches
the recorded graph, so agreement is an independent check of every backward
rule on the path. Relative error uses an absolute floor in the denominator
because tiny gradients make a pure ratio ill-conditioned.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, evaluate_with_gradients

__all__ = ["finite_difference_gradients", "max_relative_error", "check_gradients"]


def finite_difference_gradients(
    fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of a scalar expression, one coordinate at a time."""
    grads: dict[str, np.ndarray] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn(params).data)
            flat[i] = orig - step
            lo = float(fn(params).data)
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * step)
        grads[name] = g.reshape(p.data.shape)
    return grads


def max_relative_error(
    analytic: dict[str, np.ndarray],
    numeric: dict[str, np.ndarray],
    floor: float = 1e-2,
) -> tuple[float, str]:
    """Worst relative error across all parameters, and where it occurred."""
    worst = 0.0
    worst_name = ""
    for name, a in analytic.items():
        f = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        err = np.abs(a - f) / denom
        m = float(err.max()) if err.size else 0.0
        if m >= worst:
            worst = m
            worst_name = name
    return worst, worst_name


def check_gradients(
    fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-5,
) -> float:
    """Raise if tape gradients disagree with central differences."""
    _, analytic = evaluate_with_gradients(fn, params)
    numeric = finite_difference_gradients(fn, params, step=step)
    worst, name = max_relative_error(analytic, numeric)
    if worst > tolerance:
        raise AssertionError(
            f"gradient mismatch on '{name}': relative error {worst:.3e} > {tolerance:.1e}"
        )
    return worst

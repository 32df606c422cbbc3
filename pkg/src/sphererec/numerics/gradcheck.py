"""Finite-difference checking utilities for the taped gradients."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(loss_fn: Callable[[], float], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of loss_fn with respect to tensor t.

    loss_fn must recompute the loss from current tensor contents; t.data is
    perturbed in place and restored.
    """
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gf[i] = (up - down) / (2.0 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Worst elementwise relative error, with a floor so 0-vs-0 compares equal."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def check_tensors(
    loss_fn: Callable[[], float],
    tensors: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Worst relative error across several (tensor, analytic grad) pairs."""
    worst = 0.0
    for t, g in zip(tensors, grads):
        fd = numeric_grad(loss_fn, t, h=h)
        worst = max(worst, max_rel_error(g, fd))
    return worst

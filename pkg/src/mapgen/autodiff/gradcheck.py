"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-6) -> float:
    """``||a - n|| / max(||a||, ||n||)``, or 0 when both norms are below ``atol``.

    Some gradients are exactly zero by construction (an attention key bias, since
    softmax ignores a per-row constant); there the finite differences are pure noise.
    """
    num = float(np.linalg.norm(analytic - numeric))
    den = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if den < atol:
        return 0.0
    return num / den


def numeric_grad(fn: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                    h: float = 1e-5) -> float:
    """Max relative error between backward() and finite differences over ``tensors``.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of ``tensors``
    and return a scalar tensor.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        n = numeric_grad(lambda: float(loss_fn().data), t.data, h)
        worst = max(worst, relative_error(a, n))
    for t in tensors:
        t.grad = None
    return worst

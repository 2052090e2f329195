"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``, zero when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(loss_fn: Callable[[], Tensor], t: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``t``.

    ``loss_fn`` must rebuild the computation from scratch each call; the
    tensor's buffer is swapped out for the perturbed copy while it runs.
    """
    original = t.data
    base = np.array(original, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    try:
        for i in range(base.size):
            for sign in (1.0, -1.0):
                probe = base.copy()
                probe.reshape(-1)[i] += sign * h
                probe.setflags(write=False)
                t.data = probe
                val = float(np.asarray(loss_fn().data))
                flat[i] += sign * val
            flat[i] /= 2.0 * h
    finally:
        t.data = original
    return grad


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                    h: float = 1e-6) -> list[float]:
    """Relative error between tape and finite-difference gradients, one per tensor."""
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    analytic = [np.zeros(t.shape) if t.grad is None else np.array(t.grad) for t in tensors]
    return [relative_error(a, numeric_grad(loss_fn, t, h)) for a, t in zip(analytic, tensors)]

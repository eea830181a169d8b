"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, recording


def finite_difference_grad(f: Callable[[Tensor], Tensor], x: np.ndarray,
                           h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar-valued function at ``x``."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    base = x.astype(np.float64, copy=True)
    for i in range(base.size):
        orig = base.reshape(-1)[i]
        base.reshape(-1)[i] = orig + h
        fp = float(f(Tensor(base.copy())).data)
        base.reshape(-1)[i] = orig - h
        fm = float(f(Tensor(base.copy())).data)
        base.reshape(-1)[i] = orig
        flat[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
               floor: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central finite differences.

    The relative error denominator is floored at ``floor`` so that
    near-zero gradient components compare on an absolute scale.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    with recording(Tape()) as tape:
        out = f(probe)
        if out.data.size != 1:
            raise ValueError("grad_check target must map to a scalar")
        tape.backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    numeric = finite_difference_grad(f, x.data, h=h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))

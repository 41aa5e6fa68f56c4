"""Finite-difference gradient checks and input gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .nn import Module
from .tensor import ShapeError, Tensor, grad, no_grad


def grad_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` takes no arguments and returns a scalar tensor computed from
    ``tensors``. The denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    Inputs sitting within ``eps`` of a ReLU kink give meaningless numeric
    gradients; callers must keep such points out of the check.
    """
    tensors = list(tensors)
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = True
    worst = 0.0
    try:
        analytic = grad(fn(), tensors)
        # fn may itself differentiate (gradient penalties), so keep grad mode on
        for t, a in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            a_flat = a.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = fn().item()
                flat[i] = orig - eps
                f_minus = fn().item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                denom = max(abs(a_flat[i]), abs(numeric), 1e-8)
                worst = max(worst, abs(a_flat[i] - numeric) / denom)
    finally:
        for t, flag in zip(tensors, saved):
            t.requires_grad = flag
    return worst


def grad_check_module(module: Module, x, eps: float = 1e-4, seed: int = 0) -> float:
    """Check parameter gradients of ``sum(r * module(x))`` for a fixed random ``r``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    with no_grad():
        out_shape = module(x).shape
    r = np.random.default_rng(seed).standard_normal(out_shape)
    return grad_check(lambda: (module(x) * r).sum(), module.parameters(), eps)


def input_gradient(module: Callable, x, create_graph: bool = False) -> Tensor:
    """Gradient of each batch element's scalar output w.r.t. its input.

    ``module(x)`` must produce one scalar per batch element (shape (B,),
    (B, 1) or (B, 1, 1)). Elements are independent, so the gradient of the
    batch sum recovers every per-element gradient at once.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if not x.requires_grad:
        x = Tensor(x.data, requires_grad=True)
    out = module(x)
    if out.size != x.shape[0]:
        raise ShapeError(f"input_gradient: expected one scalar per batch element, got output {out.shape}")
    return grad(out.sum(), [x], create_graph=create_graph)[0]

"""Composite layer ops built from differentiable primitives.

Because each op is a composition of primitives whose backward passes are
themselves differentiable, everything here supports second-order gradients.
"""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, fold1d, matmul, pad, sqrt, swap_last, unfold1d, unfold2d


def conv_out_len(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv_transpose_out_len(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length - 1) * stride - 2 * padding + kernel


def dense(x, weight, bias=None) -> Tensor:
    """Affine map over the last axis; ``weight`` has shape (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"dense: input features {x.shape[-1]} != weight in-features {weight.shape[1]}")
    lead = x.shape[:-1]
    if len(lead) > 1:
        # one 2-D product is much cheaper than a broadcast batched matmul
        out = matmul(x.reshape(-1, x.shape[-1]), swap_last(weight)).reshape(*lead, weight.shape[0])
    else:
        out = matmul(x, swap_last(weight))
    if bias is not None:
        out = out + bias
    return out


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """x: (B, C, L); weight: (O, C, K)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with weight {weight.shape}")
    B, C, L = x.shape
    O, _, K = weight.shape
    L_out = conv_out_len(L, K, stride, padding)
    if L_out < 1:
        raise ShapeError(f"conv1d: input length {L} too short for kernel {K}")
    xp = pad(x, ((0, 0), (0, 0), (padding, padding)))
    cols = unfold1d(xp, K, stride).transpose(0, 2, 1, 3).reshape(B * L_out, C * K)
    out = matmul(cols, swap_last(weight.reshape(O, C * K)))
    out = out.reshape(B, L_out, O).transpose(0, 2, 1)
    if bias is not None:
        out = out + as_tensor(bias).reshape(1, O, 1)
    return out


def conv_transpose1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """x: (B, C_in, L); weight: (C_in, C_out, K). Output length (L-1)*s - 2p + K."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"conv_transpose1d: input {x.shape} incompatible with weight {weight.shape}")
    B, C_in, L = x.shape
    _, C_out, K = weight.shape
    full = (L - 1) * stride + K
    L_out = full - 2 * padding
    if L_out < 1:
        raise ShapeError(f"conv_transpose1d: non-positive output length {L_out}")
    rows = x.transpose(0, 2, 1).reshape(B * L, C_in)
    cols = matmul(rows, weight.reshape(C_in, C_out * K))
    cols = cols.reshape(B, L, C_out, K).transpose(0, 2, 1, 3)
    out = fold1d(cols, full, stride)
    if padding:
        out = out[:, :, padding:padding + L_out]
    if bias is not None:
        out = out + as_tensor(bias).reshape(1, C_out, 1)
    return out


def conv2d(x, weight, bias=None, padding: int = 0) -> Tensor:
    """Stride-1 2-D convolution. x: (B, C, H, W); weight: (O, C, KH, KW)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    B, C, H, W = x.shape
    O, _, KH, KW = weight.shape
    Ho, Wo = H + 2 * padding - KH + 1, W + 2 * padding - KW + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {(KH, KW)}")
    xp = pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = unfold2d(xp, KH, KW).transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * KH * KW)
    out = matmul(cols, swap_last(weight.reshape(O, C * KH * KW)))
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + as_tensor(bias).reshape(1, O, 1, 1)
    return out


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of (B, C, L) input.

    In training mode batch statistics are used and the running buffers are
    updated in place; otherwise the running buffers are used.
    """
    x = as_tensor(x)
    C = x.shape[1]
    axes = (0, 2) if x.ndim == 3 else (0,)
    shape = (1, C, 1) if x.ndim == 3 else (1, C)
    if training:
        mu = x.mean(axis=axes, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        n = x.size // C
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.reshape(C)
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.reshape(C) * (n / max(n - 1, 1))
        xhat = centered / sqrt(var + eps)
    else:
        xhat = (x - running_mean.reshape(shape)) / np.sqrt(running_var.reshape(shape) + eps)
    return xhat * as_tensor(gamma).reshape(shape) + as_tensor(beta).reshape(shape)


def instance_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel) row of a (B, C, L) tensor over L."""
    x = as_tensor(x)
    mu = x.mean(axis=2, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=2, keepdims=True)
    return centered / sqrt(var + eps)

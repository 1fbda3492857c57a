"""Dense float64 primitives with hand-written backward passes.

Every array in the package is a plain ``numpy.ndarray`` of dtype float64.
Forward functions are pure; each differentiable op has a matching
``*_backward`` that maps an upstream gradient to input gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

Tensor = np.ndarray

INIT_STD = 0.02
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


def tensor(values, shape: Sequence[int] | None = None) -> Tensor:
    """Build a float64 tensor, optionally reshaping a flat row-major buffer."""
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ShapeError(f"dimensions must be positive, got {shape}")
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ContractError("tensor values must be finite")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    # PCG64 streams are bit-stable across platforms for a given seed.
    return np.random.Generator(np.random.PCG64(seed))


def init_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> Tensor:
    return rng.normal(0.0, std, size=shape)


def round_half_away(x):
    """Round to nearest integer, halves away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-wise ``w @ x_i + b`` with ``w`` stored as (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} does not match weight {w.shape}")
    y = x @ w.T
    if b is not None:
        y = y + b
    return y


def linear_backward(x: Tensor, w: Tensor, dy: Tensor):
    """Returns (dx, dw, db) for ``linear``; leading axes of x are batch axes."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dx = dy @ w
    dw = dy2.T @ x2
    db = dy2.sum(axis=0)
    return dx, dw, db


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(y: Tensor, dy: Tensor, axis: int = -1) -> Tensor:
    """Gradient through softmax given its output ``y``."""
    return y * (dy - np.sum(dy * y, axis=axis, keepdims=True))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def sigmoid(x: Tensor) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_backward(x: Tensor, dy: Tensor) -> Tensor:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """``gain * x / sqrt(mean(x**2) + eps)`` over the last axis."""
    if eps < 0:
        raise ContractError("eps must be non-negative")
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return gain * x / np.sqrt(ms + eps)


def rms_norm_backward(x: Tensor, gain: Tensor, eps: float, dy: Tensor):
    """Returns (dx, dgain)."""
    d = x.shape[-1]
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    xhat = x * r
    dgain = np.sum((dy * xhat).reshape(-1, d), axis=0)
    g = dy * gain
    dx = r * (g - xhat * np.mean(g * xhat, axis=-1, keepdims=True))
    return dx, dgain


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-row cross-entropy of integer labels under softmax(logits)."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    lp = log_softmax(logits, axis=-1)
    return -lp[np.arange(len(labels)), labels]


def cross_entropy_backward(logits: Tensor, labels, dloss: Tensor) -> Tensor:
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    p = softmax(logits, axis=-1)
    p[np.arange(len(labels)), labels] -= 1.0
    return p * np.asarray(dloss, dtype=np.float64).reshape(-1, 1)


def grad_check(
    f: Callable[[Tensor], tuple[float, Tensor]],
    x: Tensor,
    h: float = 1e-5,
    indices: Sequence[int] | None = None,
) -> float:
    """Max relative error between ``f``'s analytic gradient and central differences.

    ``f(x)`` must return ``(value, grad)`` where value is a scalar and grad has
    the shape of ``x``. ``indices`` restricts the comparison to a subset of
    flat positions. The relative error of one component is
    ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ContractError(f"step h={h} outside [1e-7, 1e-3]")
    x = np.array(x, dtype=np.float64)
    value, grad = f(x.copy())
    if np.ndim(value) != 0:
        raise ContractError(f"grad_check needs a scalar function, got shape {np.shape(value)}")
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    if grad.size != x.size:
        raise ShapeError(f"gradient size {grad.size} != input size {x.size}")
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    worst = 0.0
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp, _ = f(x.copy())
        flat[i] = old - h
        fm, _ = f(x.copy())
        flat[i] = old
        numeric = (float(fp) - float(fm)) / (2.0 * h)
        a = grad[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst

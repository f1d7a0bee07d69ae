"""Primitive tensor operations with a pinned floating-point evaluation order.

Every reduction accumulates left to right in float32 (matmul loops over the
inner dimension, sums use a sequential prefix scan). Transcendentals are
evaluated in float64 and rounded once to float32, which makes them agree
with a scalar ``math`` reference. Two calls with equal inputs therefore
produce bitwise-equal outputs regardless of how the surrounding program is
split across threads or processes.

The ``*_kernel`` functions operate on raw float32 arrays and are shared by
the tape; the public functions take and return :class:`Tensor`.
"""

from __future__ import annotations

import math

import numpy as np

from .core import DType, NumericError, ShapeError, Tensor, project, result_dtype

GELU_C = np.float32(math.sqrt(2.0 / math.pi))
GELU_A = np.float32(0.044715)
RMS_EPS = np.float32(1e-5)


# -- kernels -----------------------------------------------------------------


def exp_kernel(x: np.ndarray) -> np.ndarray:
    return np.exp(x.astype(np.float64)).astype(np.float32)


def log_kernel(x: np.ndarray) -> np.ndarray:
    return np.log(x.astype(np.float64)).astype(x.dtype)


def tanh_kernel(x: np.ndarray) -> np.ndarray:
    return np.tanh(x.astype(np.float64)).astype(np.float32)


def sum_last_kernel(x: np.ndarray) -> np.ndarray:
    """Sequential left-to-right sum over the last axis."""
    return np.cumsum(x, axis=-1)[..., -1]


def sum_rows_kernel(x: np.ndarray) -> np.ndarray:
    """Sequential sum over every axis except the last (rows in row-major order)."""
    flat = x.reshape(-1, x.shape[-1])
    return np.cumsum(flat, axis=0)[-1]


def matmul_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a[..., M, K] @ b[..., K, N]`` accumulating over K left to right."""
    k_dim = a.shape[-1]
    out = a[..., :, 0:1] * b[..., 0:1, :]
    if k_dim > 1:
        tmp = np.empty_like(out)
        for k in range(1, k_dim):
            np.multiply(a[..., :, k : k + 1], b[..., k : k + 1, :], out=tmp)
            out += tmp
    return out


def linear_kernel(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x[..., K] @ w[K, N]`` with leading dims flattened into rows."""
    lead = x.shape[:-1]
    out = matmul_kernel(x.reshape(-1, x.shape[-1]), w)
    return out.reshape(*lead, w.shape[1])


def softmax_kernel(z: np.ndarray, temperature: float = 1.0, causal: bool = False) -> np.ndarray:
    if temperature != 1.0:
        z = z / np.asarray(temperature, dtype=z.dtype)
    if causal:
        t_q, t_k = z.shape[-2], z.shape[-1]
        future = np.triu(np.ones((t_q, t_k), dtype=bool), k=1 + t_k - t_q)
        z = np.where(future, np.float32(-np.inf), z)
    m = z.max(axis=-1, keepdims=True)
    if z.dtype != np.float32:
        e = np.exp(z - m)
        return e / sum_last_kernel(e)[..., None]
    # normaliser accumulated sequentially in float64, one rounding at the end
    e = exp_kernel(z - m)
    s = np.cumsum(e, axis=-1, dtype=np.float64)[..., -1:]
    return (e / s).astype(np.float32)


def rmsnorm_kernel(x: np.ndarray, gain: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(y, r)`` with ``r = 1/sqrt(mean(x^2) + eps)`` per row."""
    d = np.float32(x.shape[-1])
    ms = sum_last_kernel(x * x) / d
    r = np.float32(1.0) / np.sqrt(ms + RMS_EPS)
    return (x * r[..., None]) * gain, r


def gelu_kernel(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """GELU (tanh approximation). Returns ``(y, tanh_term)``."""
    inner = GELU_C * (x + GELU_A * (x * x * x))
    t = tanh_kernel(inner)
    return np.float32(0.5) * x * (np.float32(1.0) + t), t


def gelu_grad_kernel(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    dinner = GELU_C * (np.float32(1.0) + np.float32(3.0) * GELU_A * x * x)
    return np.float32(0.5) * (np.float32(1.0) + t) + np.float32(0.5) * x * (np.float32(1.0) - t * t) * dinner


# -- Tensor-level API --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``[M, K]`` and ``[K, N]`` tensors (or batched rank 3/4)."""
    if a.dtype is not b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype.name} vs {b.dtype.name}")
    if a.rank < 2 or b.rank < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul dimension mismatch: {list(a.shape)} x {list(b.shape)}")
    return Tensor(project(matmul_kernel(a.data, b.data), a.dtype), a.dtype)


def linear(x: Tensor, w: Tensor) -> Tensor:
    if w.rank != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear dimension mismatch: {list(x.shape)} x {list(w.shape)}")
    dt = result_dtype(x, w)
    return Tensor(project(linear_kernel(x.data, w.data), dt), dt)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; ``b`` may also be a last-dim bias vector."""
    if a.shape != b.shape and not (b.rank == 1 and b.shape[0] == a.shape[-1]):
        raise ShapeError(f"add shape mismatch: {list(a.shape)} + {list(b.shape)}")
    dt = result_dtype(a, b)
    return Tensor(project(a.data + b.data, dt), dt)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {list(a.shape)} * {list(b.shape)}")
    dt = result_dtype(a, b)
    return Tensor(project(a.data * b.data, dt), dt)


def softmax(z: Tensor, temperature: float = 1.0) -> Tensor:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if not np.isfinite(z.data).all():
        raise NumericError("softmax input contains non-finite values")
    return Tensor(project(softmax_kernel(z.data, temperature), z.dtype), z.dtype)


def rmsnorm(x: Tensor, gain: Tensor) -> Tensor:
    if gain.shape != (x.shape[-1],):
        raise ShapeError(f"rmsnorm gain {list(gain.shape)} does not match {list(x.shape)}")
    dt = result_dtype(x, gain)
    return Tensor(project(rmsnorm_kernel(x.data, gain.data)[0], dt), dt)


def gelu(x: Tensor) -> Tensor:
    return Tensor(project(gelu_kernel(x.data)[0], x.dtype), x.dtype)


def total(x: Tensor) -> Tensor:
    """Sum of every element, row-major left to right, as a shape-[1] tensor."""
    return Tensor(project(sum_last_kernel(x.data.reshape(1, -1)), x.dtype), x.dtype)

"""Reverse-mode autodiff over a linear record of primitive ops.

Values live in integer *slots*. Each recorded op stores a closure mapping
the output gradient to one gradient per input; :meth:`Tape.backward` walks
the record in exact reverse order and sums contributions per slot.

A tape built with ``record=False`` evaluates the same kernels without
keeping any backward state, which is how inference shares code with
training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .core import DType, ShapeError, Tensor, project, result_dtype

BackwardFn = Callable[[np.ndarray], tuple]


class TapeError(RuntimeError):
    """Raised on misuse of a tape (non-scalar loss, backward without record)."""


@dataclass
class _Op:
    name: str
    inputs: tuple[int, ...]
    output: int
    backward: BackwardFn


class Tape:
    def __init__(self, record: bool = True):
        self.record = record
        self.values: list[Tensor] = []
        self.requires_grad: list[bool] = []
        self.is_leaf: list[bool] = []
        self.ops: list[_Op] = []

    # -- slots ---------------------------------------------------------------

    def _new(self, value: Tensor, requires_grad: bool, leaf: bool = False) -> int:
        self.values.append(value)
        self.requires_grad.append(requires_grad and self.record)
        self.is_leaf.append(leaf)
        return len(self.values) - 1

    def leaf(self, value: Tensor) -> int:
        """Register a trainable input."""
        return self._new(value, True, leaf=True)

    def const(self, value: Tensor) -> int:
        return self._new(value, False)

    def value(self, slot: int) -> Tensor:
        return self.values[slot]

    def _emit(self, name: str, inputs: tuple[int, ...], out: np.ndarray, dtype: DType, backward: BackwardFn) -> int:
        needs = any(self.requires_grad[i] for i in inputs)
        slot = self._new(Tensor(project(out, dtype), dtype), needs)
        if needs:
            self.ops.append(_Op(name, inputs, slot, backward))
        return slot

    def _dt(self, *slots: int) -> DType:
        return result_dtype(*(self.values[s] for s in slots))

    # -- primitive ops -----------------------------------------------------------

    def linear(self, x: int, w: int) -> int:
        """``x[..., K] @ w[K, N]``."""
        xv, wv = self.values[x].data, self.values[w].data
        if wv.ndim != 2 or xv.shape[-1] != wv.shape[0]:
            raise ShapeError(f"linear dimension mismatch: {list(xv.shape)} x {list(wv.shape)}")
        out = ops.linear_kernel(xv, wv)

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            x2 = xv.reshape(-1, xv.shape[-1])
            dx = ops.matmul_kernel(g2, wv.T).reshape(xv.shape)
            dw = ops.matmul_kernel(x2.T, g2)
            return dx, dw

        return self._emit("linear", (x, w), out, self._dt(x, w), backward)

    def matmul(self, a: int, b: int) -> int:
        """Batched ``a[..., M, K] @ b[..., K, N]`` with equal leading dims."""
        av, bv = self.values[a].data, self.values[b].data
        if av.ndim < 2 or av.shape[-1] != bv.shape[-2] or av.shape[:-2] != bv.shape[:-2]:
            raise ShapeError(f"matmul dimension mismatch: {list(av.shape)} x {list(bv.shape)}")
        out = ops.matmul_kernel(av, bv)

        def backward(g):
            da = ops.matmul_kernel(g, np.swapaxes(bv, -1, -2))
            db = ops.matmul_kernel(np.swapaxes(av, -1, -2), g)
            return da, db

        return self._emit("matmul", (a, b), out, self._dt(a, b), backward)

    def transpose(self, a: int) -> int:
        """Swap the last two axes (contiguous copy)."""
        av = self.values[a].data
        out = np.ascontiguousarray(np.swapaxes(av, -1, -2))
        return self._emit("transpose", (a,), out, self._dt(a), lambda g: (np.swapaxes(g, -1, -2),))

    def add(self, a: int, b: int) -> int:
        av, bv = self.values[a].data, self.values[b].data
        if av.shape != bv.shape:
            raise ShapeError(f"add shape mismatch: {list(av.shape)} + {list(bv.shape)}")
        return self._emit("add", (a, b), av + bv, self._dt(a, b), lambda g: (g, g))

    def mul(self, a: int, b: int) -> int:
        av, bv = self.values[a].data, self.values[b].data
        if av.shape != bv.shape:
            raise ShapeError(f"mul shape mismatch: {list(av.shape)} * {list(bv.shape)}")
        return self._emit("mul", (a, b), av * bv, self._dt(a, b), lambda g: (g * bv, g * av))

    def scale(self, a: int, c: float) -> int:
        c32 = np.float32(c)
        return self._emit("scale", (a,), self.values[a].data * c32, self._dt(a), lambda g: (g * c32,))

    def softmax(self, z: int, temperature: float = 1.0, causal: bool = False) -> int:
        zv = self.values[z].data
        if not causal and not np.isfinite(zv).all():
            raise ops.NumericError("softmax input contains non-finite values")
        y = ops.softmax_kernel(zv, temperature, causal)
        inv_t = np.float32(1.0 / temperature)

        def backward(g):
            inner = ops.sum_last_kernel(g * y)
            dz = y * (g - inner[..., None])
            return (dz * inv_t if temperature != 1.0 else dz,)

        return self._emit("softmax", (z,), y, self._dt(z), backward)

    def rmsnorm(self, x: int, gain: int) -> int:
        xv, gv = self.values[x].data, self.values[gain].data
        if gv.shape != (xv.shape[-1],):
            raise ShapeError(f"rmsnorm gain {list(gv.shape)} does not match {list(xv.shape)}")
        y, r = ops.rmsnorm_kernel(xv, gv)
        d = np.float32(xv.shape[-1])

        def backward(g):
            r3 = r[..., None]
            dgain = ops.sum_rows_kernel(g * (xv * r3))
            gg = g * gv
            dot = ops.sum_last_kernel(gg * xv)[..., None]
            dx = r3 * gg - xv * (r3 * r3 * r3) * (dot / d)
            return dx, dgain

        return self._emit("rmsnorm", (x, gain), y, self._dt(x, gain), backward)

    def gelu(self, x: int) -> int:
        xv = self.values[x].data
        y, t = ops.gelu_kernel(xv)
        return self._emit("gelu", (x,), y, self._dt(x), lambda g: (g * ops.gelu_grad_kernel(xv, t),))

    def embedding(self, ids: np.ndarray, table: int, positional: np.ndarray | None = None) -> int:
        """Gather rows of ``table`` by ``ids`` and add an optional constant."""
        tv = self.values[table].data
        out = tv[ids]
        if positional is not None:
            out = out + positional

        def backward(g):
            dt = np.zeros_like(tv)
            np.add.at(dt, ids.reshape(-1), g.reshape(-1, tv.shape[1]))
            return (dt,)

        return self._emit("embedding", (table,), out, self._dt(table), backward)

    def split_heads(self, x: int, n_heads: int) -> int:
        """``[B, T, d] -> [B, H, T, d/H]``."""
        xv = self.values[x].data
        b, t, d = xv.shape
        out = np.ascontiguousarray(xv.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3))
        return self._emit(
            "split_heads", (x,), out, self._dt(x), lambda g: (g.transpose(0, 2, 1, 3).reshape(b, t, d),)
        )

    def merge_heads(self, x: int) -> int:
        """``[B, H, T, dh] -> [B, T, H*dh]``."""
        xv = self.values[x].data
        b, h, t, dh = xv.shape
        out = np.ascontiguousarray(xv.transpose(0, 2, 1, 3).reshape(b, t, h * dh))
        return self._emit(
            "merge_heads", (x,), out, self._dt(x), lambda g: (g.reshape(b, t, h, dh).transpose(0, 2, 1, 3),)
        )

    def total(self, x: int) -> int:
        xv = self.values[x].data
        out = ops.sum_last_kernel(xv.reshape(1, -1))
        return self._emit("total", (x,), out, self._dt(x), lambda g: (np.broadcast_to(g[0], xv.shape),))

    # -- reverse pass --------------------------------------------------------------

    def backward(self, loss: int, seed: Tensor | np.ndarray | None = None) -> dict[int, Tensor]:
        """Gradients of ``loss`` for every leaf slot.

        Without ``seed`` the loss slot must hold a single element. With a
        seed, computes the vector-Jacobian product ``seed^T d(loss)/d(leaf)``.
        """
        if not self.record:
            raise TapeError("tape was created with record=False")
        out_val = self.values[loss].data
        if seed is None:
            if out_val.size != 1:
                raise TapeError(f"backward needs a scalar loss, slot {loss} has shape {list(out_val.shape)}")
            g0 = np.ones_like(out_val)
        else:
            g0 = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=np.float32)
            if g0.shape != out_val.shape:
                raise ShapeError(f"seed shape {list(g0.shape)} != slot shape {list(out_val.shape)}")
        grads: dict[int, np.ndarray] = {loss: g0}
        for op in reversed(self.ops):
            g = grads.pop(op.output, None) if not self.is_leaf[op.output] else grads.get(op.output)
            if g is None:
                continue
            for slot, gi in zip(op.inputs, op.backward(g)):
                if gi is None or not self.requires_grad[slot]:
                    continue
                gi = np.asarray(gi, dtype=np.float32)
                prev = grads.get(slot)
                grads[slot] = gi.copy() if prev is None else prev + gi
        return {
            slot: Tensor(grads.get(slot, np.zeros_like(self.values[slot].data)))
            for slot in range(len(self.values))
            if self.is_leaf[slot] and self.requires_grad[slot]
        }

"""Student training engine: taped forward, distillation gradient, AdamW.

Both the student actor and the single-process oracle drive this class, so
the two paths share every float operation; they differ only in where the
teacher logits come from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .divergence import LossBatch
from .model import ModelWeights, build_hidden, check_tokens, head_slot, register_params
from .tensor import DType, Tape, Tensor


@dataclass
class OptimizerState:
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    """Decoupled weight decay Adam over a dict of float32 arrays."""

    def __init__(self, shapes: dict[str, tuple[int, ...]], lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.state = OptimizerState(lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)
        for name, shape in shapes.items():
            self.state.m[name] = np.zeros(shape, np.float32)
            self.state.v[name] = np.zeros(shape, np.float32)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        st = self.state
        st.step += 1
        b1, b2 = np.float32(st.betas[0]), np.float32(st.betas[1])
        lr = np.float32(st.lr)
        decay = np.float32(st.lr * st.weight_decay)
        c1 = np.float32(1.0 - st.betas[0] ** st.step)
        c2 = np.float32(1.0 - st.betas[1] ** st.step)
        eps = np.float32(st.eps)
        out = {}
        for name, p in params.items():
            g = grads[name]
            m = b1 * st.m[name] + (np.float32(1) - b1) * g
            v = b2 * st.v[name] + (np.float32(1) - b2) * (g * g)
            st.m[name], st.v[name] = m, v
            p = p - decay * p
            out[name] = p - lr * ((m / c1) / (np.sqrt(v / c2) + eps))
        return out


@dataclass
class UpdateResult:
    loss: float
    grad_norm: float
    updated: bool
    error: str | None = None


LossFn = Callable[[np.ndarray], LossBatch]


class StudentEngine:
    def __init__(self, weights: ModelWeights, lr: float, weight_decay: float = 0.0):
        if weights.dtype is not DType.F32:
            raise ValueError("the student trains in F32")
        self.weights = weights
        self.optimizer = AdamW(weights.config.param_shapes(), lr, weight_decay)
        self._reset()

    def _reset(self):
        self.grads: dict[str, np.ndarray] | None = None
        self.loss = np.float32(0.0)
        self.micro_steps = 0
        self.bad = False

    def micro_step(self, token_ids: np.ndarray, loss_fn: LossFn) -> float:
        """Forward, loss, backward for one micro-batch; accumulates gradients."""
        ids = check_tokens(token_ids, self.weights.config)
        tape = Tape()
        slots = register_params(tape, self.weights, trainable=True)
        hidden = build_hidden(tape, slots, self.weights, ids)
        logits = tape.linear(hidden, head_slot(tape, slots, self.weights))
        lb = loss_fn(tape.value(logits).data)
        self.micro_steps += 1
        if not math.isfinite(lb.loss) or not np.isfinite(lb.grad).all():
            self.bad = True
            return lb.loss
        self.loss = self.loss + np.float32(lb.loss)
        leaf_grads = tape.backward(logits, seed=Tensor(lb.grad))
        names = list(slots)
        if self.grads is None:
            self.grads = {n: leaf_grads[slots[n]].data.copy() for n in names}
        else:
            for n in names:
                self.grads[n] += leaf_grads[slots[n]].data
        return lb.loss

    def grad_norm(self) -> float:
        if self.grads is None:
            return 0.0
        acc = 0.0
        for g in self.grads.values():
            g64 = g.astype(np.float64).ravel()
            acc += float(np.cumsum(g64 * g64)[-1])
        return math.sqrt(acc)

    def apply_update(self) -> UpdateResult:
        """AdamW step on the accumulated gradients, then clear them.

        A non-finite loss in any micro-step skips the update entirely.
        """
        loss = float(self.loss)
        if self.bad or self.grads is None:
            err = "non-finite loss" if self.bad else "no gradients accumulated"
            res = UpdateResult(float("nan") if self.bad else loss, float("nan"), False, err)
            self._reset()
            return res
        norm = self.grad_norm()
        new = self.optimizer.step(dict(self.weights.params), self.grads)
        self.weights = self.weights.replace(new)
        self._reset()
        return UpdateResult(loss, norm, True)

"""Token-level distillation losses over full vocabulary distributions.

With ``p = softmax(teacher / T)`` and ``q = softmax(student / T)`` at each
position:

* FKL  = sum p log(p / q)
* RKL  = sum q log(q / p)
* JSD  = 0.5 KL(p || m) + 0.5 KL(q || m),  m = (p + q) / 2
* TVD  = 0.5 sum |p - q|

Losses are mean-reduced over unmasked positions. Gradients are taken with
respect to the student logits only; every kind shares the form
``q * (g - <q, g>) / T`` where ``g`` is the derivative w.r.t. ``q``
(up to a constant that the centering removes).

Inputs may be float32 (training path) or float64 (used by the
finite-difference checks); computation stays in the input precision.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor
from .tensor import ops

PROB_FLOOR = 1e-12


class DivergenceKind(str, enum.Enum):
    FKL = "fkl"
    RKL = "rkl"
    JSD = "jsd"
    TVD = "tvd"

    @classmethod
    def parse(cls, value: str | DivergenceKind) -> DivergenceKind:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown divergence {value!r}; expected one of {[k.value for k in cls]}") from None


@dataclass
class LossBatch:
    loss: float
    per_position: np.ndarray
    grad: np.ndarray
    mask: np.ndarray


def _as_array(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


def _log(x: np.ndarray) -> np.ndarray:
    return ops.log_kernel(np.maximum(x, x.dtype.type(PROB_FLOOR)))


def _softmax(z: np.ndarray, temperature: float, support: np.ndarray | None = None) -> np.ndarray:
    if temperature != 1.0:
        z = z / np.asarray(temperature, dtype=z.dtype)
    m = z.max(axis=-1, keepdims=True)
    e = ops.exp_kernel(z - m) if z.dtype == np.float32 else np.exp(z - m)
    if support is not None:
        e = e * support.astype(z.dtype)
    if z.dtype == np.float32:
        return (e / np.cumsum(e, axis=-1, dtype=np.float64)[..., -1:]).astype(np.float32)
    return e / ops.sum_last_kernel(e)[..., None]


def _centered(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    return q * (g - ops.sum_last_kernel(q * g)[..., None])


def _per_position(kind: DivergenceKind, p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-position divergence and its gradient w.r.t. the (softened) student logits."""
    half = p.dtype.type(0.5)
    lp, lq = _log(p), _log(q)
    if kind is DivergenceKind.FKL:
        return ops.sum_last_kernel(p * (lp - lq)), q - p
    if kind is DivergenceKind.RKL:
        g = lq - lp
        return ops.sum_last_kernel(q * g), _centered(q, g)
    if kind is DivergenceKind.JSD:
        lm = _log(half * (p + q))
        per = half * ops.sum_last_kernel(p * (lp - lm)) + half * ops.sum_last_kernel(q * (lq - lm))
        return per, _centered(q, half * (lq - lm))
    if kind is DivergenceKind.TVD:
        return half * ops.sum_last_kernel(np.abs(p - q)), _centered(q, half * np.sign(q - p))
    raise ValueError(f"unhandled divergence {kind}")


def _check(teacher: np.ndarray, student: np.ndarray, mask: np.ndarray, temperature: float):
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if teacher.shape != student.shape:
        raise ShapeError(f"teacher logits {list(teacher.shape)} vs student logits {list(student.shape)}")
    if mask.shape != student.shape[:-1]:
        raise ShapeError(f"mask {list(mask.shape)} does not match logits {list(student.shape)}")


def _reduce(
    per: np.ndarray, grad_s: np.ndarray, mask: np.ndarray, temperature: float, denom: float | None
) -> LossBatch:
    dt = per.dtype.type
    m = mask.astype(per.dtype)
    if denom is None:
        denom = max(1.0, float(mask.sum()))
    masked = per * m
    loss = ops.sum_last_kernel(masked.reshape(1, -1))[0] / dt(denom)
    row_scale = (m / dt(denom))[..., None]
    if temperature != 1.0:
        row_scale = row_scale / dt(temperature)
    return LossBatch(float(loss), masked, grad_s * row_scale, mask)


def kd_loss(kind, teacher_logits, student_logits, mask, temperature: float = 1.0, denom: float | None = None) -> LossBatch:
    """Distillation loss and its gradient w.r.t. ``student_logits``.

    ``denom`` overrides the normaliser (default: number of unmasked positions,
    at least 1); gradient accumulation passes the global count so micro-batch
    losses sum to the full-batch loss.
    """
    kind = DivergenceKind.parse(kind)
    t, s = _as_array(teacher_logits), _as_array(student_logits)
    s = s.astype(t.dtype, copy=False)
    mask = np.asarray(mask)
    _check(t, s, mask, temperature)
    p = _softmax(t, temperature)
    q = _softmax(s, temperature)
    per, grad_s = _per_position(kind, p, q)
    return _reduce(per, grad_s, mask, temperature, denom)


def topk_support(teacher_logits: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the ``k`` largest logits per row (ties go to the lower id)."""
    order = np.argsort(-teacher_logits, axis=-1, kind="stable")[..., :k]
    support = np.zeros(teacher_logits.shape, dtype=bool)
    np.put_along_axis(support, order, True, axis=-1)
    return support


def kd_loss_topk(
    kind, teacher_logits, k: int, student_logits, mask, temperature: float = 1.0, denom: float | None = None
) -> LossBatch:
    """Same losses with the teacher rebuilt from its top-``k`` logits only.

    The teacher distribution is renormalised over the ``k`` retained ids and
    is zero elsewhere. This is a deliberately lossy baseline.
    """
    kind = DivergenceKind.parse(kind)
    t, s = _as_array(teacher_logits), _as_array(student_logits)
    s = s.astype(t.dtype, copy=False)
    mask = np.asarray(mask)
    _check(t, s, mask, temperature)
    if not 1 <= k <= t.shape[-1]:
        raise ValueError(f"top_k must be in [1, {t.shape[-1]}], got {k}")
    p = _softmax(t, temperature, topk_support(t, k))
    q = _softmax(s, temperature)
    per, grad_s = _per_position(kind, p, q)
    return _reduce(per, grad_s, mask, temperature, denom)


def distill_step_loss(
    teacher_hidden: Tensor,
    teacher_head: Tensor,
    student_logits,
    kind,
    mask,
    temperature: float = 1.0,
    denom: float | None = None,
    top_k: int = 0,
) -> LossBatch:
    """Recompute teacher logits from hidden states, then apply the loss."""
    teacher_logits = ops.linear(teacher_hidden, teacher_head)
    if top_k:
        return kd_loss_topk(kind, teacher_logits, top_k, student_logits, mask, temperature, denom)
    return kd_loss(kind, teacher_logits, student_logits, mask, temperature, denom)

"""Decoder forward passes: batch (training or inference) and KV-cached decode."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..tensor import DType, ShapeError, Tape, Tensor, project
from ..tensor import ops
from .weights import ModelConfig, ModelWeights


class TokenRangeError(ValueError):
    pass


class CacheFullError(RuntimeError):
    pass


def check_tokens(token_ids: np.ndarray, config: ModelConfig) -> np.ndarray:
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ShapeError(f"token ids must be [B, T], got shape {ids.shape}")
    if ids.shape[1] > config.max_seq_len:
        raise TokenRangeError(f"sequence length {ids.shape[1]} exceeds max_seq_len {config.max_seq_len}")
    bad = np.argwhere((ids < 0) | (ids >= config.vocab_size))
    if len(bad):
        b, t = bad[0]
        raise TokenRangeError(f"token id {ids[b, t]} at position (batch={b}, t={t}) outside [0, {config.vocab_size})")
    return ids.astype(np.int64)


def register_params(tape: Tape, weights: ModelWeights, trainable: bool) -> dict[str, int]:
    add = tape.leaf if trainable else tape.const
    return {name: add(t) for name, t in weights.named_tensors()}


def build_hidden(tape: Tape, slots: dict[str, int], weights: ModelWeights, ids: np.ndarray) -> int:
    """Record the decoder body on ``tape``; returns the post-final-norm slot."""
    cfg = weights.config
    b, t = ids.shape
    x = tape.embedding(ids, slots["embed"], weights.positional[:t])
    scale = 1.0 / math.sqrt(cfg.head_dim)
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h = tape.rmsnorm(x, slots[p + "norm1"])
        q = tape.split_heads(tape.linear(h, slots[p + "wq"]), cfg.n_heads)
        k = tape.split_heads(tape.linear(h, slots[p + "wk"]), cfg.n_heads)
        v = tape.split_heads(tape.linear(h, slots[p + "wv"]), cfg.n_heads)
        scores = tape.scale(tape.matmul(q, tape.transpose(k)), scale)
        attn = tape.matmul(tape.softmax(scores, causal=True), v)
        x = tape.add(x, tape.linear(tape.merge_heads(attn), slots[p + "wo"]))
        h2 = tape.rmsnorm(x, slots[p + "norm2"])
        x = tape.add(x, tape.linear(tape.gelu(tape.linear(h2, slots[p + "w1"])), slots[p + "w2"]))
    return tape.rmsnorm(x, slots["final_norm"])


def head_slot(tape: Tape, slots: dict[str, int], weights: ModelWeights) -> int:
    if weights.config.tied_lm_head:
        return tape.transpose(slots["embed"])
    return slots["lm_head"]


def forward_hidden(weights: ModelWeights, token_ids) -> Tensor:
    """Final-layer, post-norm hidden states ``[B, T, d]`` (no gradient state)."""
    ids = check_tokens(token_ids, weights.config)
    tape = Tape(record=False)
    slots = register_params(tape, weights, trainable=False)
    return tape.value(build_hidden(tape, slots, weights, ids))


def apply_lm_head(head: ModelWeights | Tensor, hidden: Tensor) -> Tensor:
    """``hidden[B, T, d] @ head[d, V]``; ``head`` may be weights or the bare matrix."""
    w = head.lm_head() if isinstance(head, ModelWeights) else head
    if hidden.shape[-1] != w.shape[0]:
        raise ShapeError(f"hidden dim {hidden.shape[-1]} does not match LM head {list(w.shape)}")
    return ops.linear(hidden, w)


def forward_logits(weights: ModelWeights, token_ids) -> Tensor:
    return apply_lm_head(weights, forward_hidden(weights, token_ids))


# -- KV-cached decoding -----------------------------------------------------------


@dataclass
class KVCache:
    config: ModelConfig
    keys: list[np.ndarray] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)
    length: int = 0

    def __post_init__(self):
        if not self.keys:
            shape = (self.config.max_seq_len, self.config.d_model)
            self.keys = [np.zeros(shape, np.float32) for _ in range(self.config.n_layers)]
            self.values = [np.zeros(shape, np.float32) for _ in range(self.config.n_layers)]

    @property
    def lengths(self) -> list[int]:
        return [self.length] * self.config.n_layers


def new_cache(config: ModelConfig) -> KVCache:
    return KVCache(config)


def decode_step(weights: ModelWeights, cache: KVCache, token_id: int) -> tuple[np.ndarray, KVCache]:
    """Advance one position; returns next-token logits ``[V]`` and the cache.

    The cache is updated in place (it is single-owner) and also returned.
    """
    cfg = weights.config
    if cache.length >= cfg.max_seq_len:
        raise CacheFullError(f"KV cache full at {cache.length} positions")
    if not 0 <= token_id < cfg.vocab_size:
        raise TokenRangeError(f"token id {token_id} outside [0, {cfg.vocab_size})")
    dt = weights.dtype
    pos = cache.length
    h_dim = cfg.head_dim
    scale = np.float32(1.0 / math.sqrt(h_dim))

    x = project(weights["embed"][token_id][None, :] + weights.positional[pos][None, :], dt)
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h = project(ops.rmsnorm_kernel(x, weights[p + "norm1"])[0], dt)
        q = project(ops.matmul_kernel(h, weights[p + "wq"]), dt)
        cache.keys[i][pos] = project(ops.matmul_kernel(h, weights[p + "wk"]), dt)[0]
        cache.values[i][pos] = project(ops.matmul_kernel(h, weights[p + "wv"]), dt)[0]
        keys = cache.keys[i][: pos + 1]
        vals = cache.values[i][: pos + 1]
        heads = []
        for hd in range(cfg.n_heads):
            sl = slice(hd * h_dim, (hd + 1) * h_dim)
            s = project(ops.matmul_kernel(q[:, sl], np.ascontiguousarray(keys[:, sl].T)) * scale, dt)
            a = project(ops.softmax_kernel(s), dt)
            heads.append(project(ops.matmul_kernel(a, vals[:, sl]), dt))
        attn = np.concatenate(heads, axis=1)
        x = project(x + project(ops.matmul_kernel(attn, weights[p + "wo"]), dt), dt)
        h2 = project(ops.rmsnorm_kernel(x, weights[p + "norm2"])[0], dt)
        f = project(ops.gelu_kernel(project(ops.matmul_kernel(h2, weights[p + "w1"]), dt))[0], dt)
        x = project(x + project(ops.matmul_kernel(f, weights[p + "w2"]), dt), dt)
    hidden = project(ops.rmsnorm_kernel(x, weights["final_norm"])[0], dt)
    logits = project(ops.matmul_kernel(hidden, weights.lm_head().data), dt)
    cache.length = pos + 1
    return logits[0], cache

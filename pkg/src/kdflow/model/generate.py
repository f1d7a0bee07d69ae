from __future__ import annotations

import numpy as np

from ..tensor import make_rng
from ..tensor import ops
from .forward import TokenRangeError, decode_step, new_cache
from .weights import ModelWeights

EOS_ID = 0


def sample_token(logits: np.ndarray, temperature: float, rng: np.random.Generator | None) -> int:
    """Draw one token id. ``temperature == 0`` selects the argmax (lowest id on ties)."""
    if temperature == 0:
        return int(np.argmax(logits))
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    probs = ops.softmax_kernel(np.asarray(logits, dtype=np.float32)[None, :], temperature)[0]
    cdf = np.cumsum(probs.astype(np.float64))
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))


def sample(
    weights: ModelWeights,
    prompt_ids,
    max_new: int,
    temperature: float,
    rng_seed: int,
    eos_id: int = EOS_ID,
) -> list[int]:
    """Autoregressively extend ``prompt_ids``; returns the new tokens only.

    Generation stops after ``max_new`` tokens or when ``eos_id`` is drawn;
    the EOS token itself is not included in the result.
    """
    prompt = [int(t) for t in prompt_ids]
    if not prompt:
        raise ValueError("prompt must be non-empty")
    if len(prompt) + max_new > weights.config.max_seq_len:
        raise TokenRangeError(
            f"prompt length {len(prompt)} + max_new {max_new} exceeds max_seq_len {weights.config.max_seq_len}"
        )
    rng = make_rng(rng_seed) if temperature > 0 else None
    cache = new_cache(weights.config)
    for tok in prompt:
        logits, cache = decode_step(weights, cache, tok)
    out: list[int] = []
    for step in range(max_new):
        tok = sample_token(logits, temperature, rng)
        if tok == eos_id:
            break
        out.append(tok)
        if step + 1 < max_new:
            logits, cache = decode_step(weights, cache, tok)
    return out

from .forward import (
    CacheFullError,
    KVCache,
    TokenRangeError,
    apply_lm_head,
    build_hidden,
    check_tokens,
    decode_step,
    forward_hidden,
    forward_logits,
    head_slot,
    new_cache,
    register_params,
)
from .generate import EOS_ID, sample, sample_token
from .weights import (
    CheckpointError,
    ConfigError,
    ModelConfig,
    ModelWeights,
    init_weights,
    load_checkpoint,
    positional_encoding,
    save_checkpoint,
)

__all__ = [
    "CacheFullError",
    "CheckpointError",
    "ConfigError",
    "EOS_ID",
    "KVCache",
    "ModelConfig",
    "ModelWeights",
    "TokenRangeError",
    "apply_lm_head",
    "build_hidden",
    "check_tokens",
    "decode_step",
    "forward_hidden",
    "forward_logits",
    "head_slot",
    "init_weights",
    "load_checkpoint",
    "new_cache",
    "positional_encoding",
    "register_params",
    "sample",
    "sample_token",
    "save_checkpoint",
]

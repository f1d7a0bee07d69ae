"""Model configuration, parameter containers, initialisation and checkpoints."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..tensor import DType, Tensor, make_rng, project, read_tensor, write_tensor

CKPT_MAGIC = b"KDCK"


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 512
    max_seq_len: int = 128
    tied_lm_head: bool = False

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.n_heads < 1:
            raise ConfigError(f"n_heads must be >= 1, got {self.n_heads}")
        if self.d_model < 8 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model must be >= 8 and divisible by n_heads, got {self.d_model}/{self.n_heads}")
        if self.d_ff < 8:
            raise ConfigError(f"d_ff must be >= 8, got {self.d_ff}")
        if self.vocab_size < 16:
            raise ConfigError(f"vocab_size must be >= 16, got {self.vocab_size}")
        if self.max_seq_len < 8:
            raise ConfigError(f"max_seq_len must be >= 8, got {self.max_seq_len}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Parameter names and shapes in declaration (= serialization) order."""
        d, f, v = self.d_model, self.d_ff, self.vocab_size
        shapes: dict[str, tuple[int, ...]] = {"embed": (v, d)}
        for i in range(self.n_layers):
            p = f"layers.{i}."
            shapes.update(
                {
                    p + "wq": (d, d),
                    p + "wk": (d, d),
                    p + "wv": (d, d),
                    p + "wo": (d, d),
                    p + "w1": (d, f),
                    p + "w2": (f, d),
                    p + "norm1": (d,),
                    p + "norm2": (d,),
                }
            )
        shapes["final_norm"] = (d,)
        if not self.tied_lm_head:
            shapes["lm_head"] = (d, v)
        return shapes


def positional_encoding(max_len: int, d: int) -> np.ndarray:
    """Fixed sinusoidal encodings ``[max_len, d]``."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((max_len, d), dtype=np.float64)
    pe[:, 0 : 2 * (d // 2) : 2] = np.sin(angle)
    pe[:, 1 : 2 * (d // 2) : 2] = np.cos(angle)
    return pe.astype(np.float32)


@dataclass
class ModelWeights:
    """Named float32 parameters for one model.

    Arrays are treated as immutable: updates replace entries rather than
    writing in place, so a forward pass may safely hold references.
    """

    config: ModelConfig
    params: dict[str, np.ndarray]
    dtype: DType = DType.F32
    _pe: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        shapes = self.config.param_shapes()
        if list(self.params) != list(shapes):
            raise ConfigError(f"parameter names {list(self.params)} do not match config {list(shapes)}")
        for name, shape in shapes.items():
            arr = np.ascontiguousarray(self.params[name], dtype=np.float32)
            if arr.shape != shape:
                raise ConfigError(f"{name}: shape {arr.shape} != expected {shape}")
            arr = project(arr, self.dtype).view()
            arr.flags.writeable = False
            self.params[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    @property
    def positional(self) -> np.ndarray:
        if self._pe is None:
            self._pe = project(positional_encoding(self.config.max_seq_len, self.config.d_model), self.dtype)
        return self._pe

    def lm_head(self) -> Tensor:
        """The ``[d, V]`` projection; the embedding transposed when tied."""
        if self.config.tied_lm_head:
            return Tensor(np.ascontiguousarray(self.params["embed"].T), self.dtype)
        return Tensor(self.params["lm_head"], self.dtype)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return [(k, Tensor(v, self.dtype)) for k, v in self.params.items()]

    def to(self, dtype: DType) -> ModelWeights:
        return ModelWeights(self.config, dict(self.params), dtype)

    def replace(self, params: dict[str, np.ndarray]) -> ModelWeights:
        return ModelWeights(self.config, params, self.dtype)

    def copy(self) -> ModelWeights:
        return ModelWeights(self.config, {k: v.copy() for k, v in self.params.items()}, self.dtype)

    def bitwise_equal(self, other: ModelWeights) -> bool:
        return self.config == other.config and all(
            np.array_equal(a.view(np.uint32), other.params[k].view(np.uint32)) for k, a in self.params.items()
        )


def fan_in(name: str, shape: tuple[int, ...]) -> int:
    # embedding rows are read through a d-wide dot product when the head is tied
    return shape[1] if name == "embed" else shape[0]


def init_weights(config: ModelConfig, seed: int) -> ModelWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices, unit norm gains."""
    rng = make_rng(seed)
    params = {}
    for name, shape in config.param_shapes().items():
        if len(shape) == 1:
            params[name] = np.ones(shape, dtype=np.float32)
            continue
        bound = 1.0 / math.sqrt(fan_in(name, shape))
        params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return ModelWeights(config, params)


# -- checkpoints ------------------------------------------------------------------

_CFG_STRUCT = struct.Struct("<6IB")


def save_checkpoint(weights: ModelWeights, path: str | Path) -> None:
    c = weights.config
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(
            _CFG_STRUCT.pack(c.n_layers, c.d_model, c.n_heads, c.d_ff, c.vocab_size, c.max_seq_len, int(c.tied_lm_head))
        )
        for _, t in weights.named_tensors():
            write_tensor(f, t)


def load_checkpoint(path: str | Path) -> ModelWeights:
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}") from e
    with f:
        if f.read(4) != CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        raw = f.read(_CFG_STRUCT.size)
        if len(raw) != _CFG_STRUCT.size:
            raise CheckpointError(f"{path}: truncated config block")
        n_layers, d, h, d_ff, v, t_max, tied = _CFG_STRUCT.unpack(raw)
        config = ModelConfig(n_layers, d, h, d_ff, v, t_max, bool(tied))
        params = {}
        dtype = DType.F32
        for name in config.param_shapes():
            t = read_tensor(f)
            params[name] = t.data
            dtype = t.dtype
        return ModelWeights(config, params, dtype)

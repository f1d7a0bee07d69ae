from .core import DType, NumericError, ShapeError, Tensor, project, project_bf16, tensor
from .ops import add, gelu, linear, matmul, mul, rmsnorm, softmax, total
from .serialize import FormatError, dumps, loads, read_tensor, write_tensor
from .tape import Tape, TapeError

import numpy as np


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by a tuple of ints."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


__all__ = [
    "DType",
    "FormatError",
    "NumericError",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "add",
    "dumps",
    "gelu",
    "linear",
    "loads",
    "make_rng",
    "matmul",
    "mul",
    "project",
    "project_bf16",
    "read_tensor",
    "rmsnorm",
    "softmax",
    "tensor",
    "total",
    "write_tensor",
]

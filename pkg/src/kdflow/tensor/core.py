"""Dense float tensors with an emulated bfloat16 mode.

All storage is float32. ``DType.BF16E`` tensors hold float32 values whose
low 16 mantissa bits are zero, i.e. values exactly representable in
bfloat16. Every arithmetic store in BF16E mode goes through
:func:`project_bf16`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

MAX_RANK = 4


class DType(enum.IntEnum):
    F32 = 0
    BF16E = 1


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class NumericError(ArithmeticError):
    """Raised when an operation receives non-finite input it cannot handle."""


def project_bf16(a: np.ndarray) -> np.ndarray:
    """Truncate float32 mantissas to 8 bits (7 stored + implicit)."""
    a = np.ascontiguousarray(a, dtype=np.float32)
    bits = a.view(np.uint32) & np.uint32(0xFFFF0000)
    return bits.view(np.float32)


def project(a: np.ndarray, dtype: DType) -> np.ndarray:
    if dtype is DType.BF16E:
        return project_bf16(a)
    return a


@dataclass(frozen=True, eq=False)
class Tensor:
    """Immutable contiguous float32 array tagged with a precision mode.

    The wrapped array is made read-only; construction never copies an array
    that is already contiguous float32 (BF16E construction projects, which
    does allocate).
    """

    data: np.ndarray
    dtype: DType = DType.F32

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.float32 or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr, dtype=np.float32)
        if not 1 <= arr.ndim <= MAX_RANK:
            raise ShapeError(f"tensor rank must be in [1, {MAX_RANK}], got shape {arr.shape}")
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dims must be >= 1, got shape {arr.shape}")
        if self.dtype is DType.BF16E:
            arr = project_bf16(arr)
        if arr.flags.writeable:
            arr = arr.view()
            arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the data."""
        return self.data.copy()

    def to(self, dtype: DType) -> Tensor:
        return Tensor(self.data, dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype.name})"


def tensor(values, dtype: DType = DType.F32) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float32), dtype)


def result_dtype(*tensors: Tensor) -> DType:
    return DType.BF16E if any(t.dtype is DType.BF16E for t in tensors) else DType.F32

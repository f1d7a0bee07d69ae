"""Binary tensor format.

Layout (little-endian)::

    b"KDT1" | dtype u8 | rank u8 | dims u32 * rank | float32 payload

BF16E tensors are stored as their float32 projection.
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO

import numpy as np

from .core import MAX_RANK, DType, Tensor

MAGIC = b"KDT1"


class FormatError(ValueError):
    pass


def header_bytes(dtype: DType, shape: tuple[int, ...]) -> bytes:
    return MAGIC + struct.pack(f"<BB{len(shape)}I", int(dtype), len(shape), *shape)


def write_tensor(f: BinaryIO, t: Tensor) -> None:
    f.write(header_bytes(t.dtype, t.shape))
    f.write(t.data.astype("<f4", copy=False).tobytes())


def read_tensor(f: BinaryIO) -> Tensor:
    head = f.read(6)
    if len(head) < 6 or head[:4] != MAGIC:
        raise FormatError(f"bad tensor magic {head[:4]!r}")
    dtype_code, rank = head[4], head[5]
    try:
        dtype = DType(dtype_code)
    except ValueError:
        raise FormatError(f"unknown dtype code {dtype_code}") from None
    if not 1 <= rank <= MAX_RANK:
        raise FormatError(f"invalid rank {rank}")
    raw_dims = f.read(4 * rank)
    if len(raw_dims) != 4 * rank:
        raise FormatError("truncated tensor header")
    dims = struct.unpack(f"<{rank}I", raw_dims)
    count = int(np.prod(dims))
    payload = f.read(4 * count)
    if len(payload) != 4 * count:
        raise FormatError(f"truncated payload: expected {4 * count} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    return Tensor(arr, dtype)


def dumps(t: Tensor) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, t)
    return buf.getvalue()


def loads(data: bytes) -> Tensor:
    return read_tensor(io.BytesIO(data))

"""Wire format for tensors crossing an actor boundary.

Header (little-endian, packed)::

    magic u32 = 0x4B444652 | sequence u64 | payload_kind u8 | dtype u8 |
    rank u8 | dims u32 * rank | payload_bytes u64 | header_crc u32

``header_crc`` is the CRC32 of every header byte before it. The payload
follows immediately: raw little-endian elements in row-major order.
"""

from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..tensor import DType, Tensor

FRAME_MAGIC = 0x4B444652
_PREFIX = struct.Struct("<IQBBB")  # magic, seq, kind, dtype, rank
_SUFFIX = struct.Struct("<QI")  # payload_bytes, crc
MAX_RANK = 4


class PayloadKind(enum.IntEnum):
    HIDDEN = 0
    TOKENS = 1
    WEIGHTS = 2
    CONTROL = 3


class WireDType(enum.IntEnum):
    F32 = 0
    BF16E = 1
    I32 = 2
    U8 = 3

    @property
    def itemsize(self) -> int:
        return 1 if self is WireDType.U8 else 4

    @property
    def numpy(self) -> np.dtype:
        return {
            WireDType.F32: np.dtype("<f4"),
            WireDType.BF16E: np.dtype("<f4"),
            WireDType.I32: np.dtype("<i4"),
            WireDType.U8: np.dtype("u1"),
        }[self]


class Opcode(enum.IntEnum):
    READY = 0
    SHUTDOWN = 1
    RESYNC = 2
    ERROR = 3
    # extensions carrying a JSON body after the opcode byte
    METRICS = 4
    COMMIT = 5
    SYNC = 6
    GENERATE = 7
    RESPONSES = 8
    TIMING = 9


class FrameError(ValueError):
    pass


def header_size(rank: int) -> int:
    return _PREFIX.size + 4 * rank + _SUFFIX.size


@dataclass
class Frame:
    kind: PayloadKind
    dtype: WireDType
    dims: tuple[int, ...]
    payload: bytes | memoryview
    sequence: int | None = None

    @property
    def payload_bytes(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) * self.dtype.itemsize

    def array(self) -> np.ndarray:
        """Payload as a numpy array (no copy; read-only if the payload is)."""
        return np.frombuffer(self.payload, dtype=self.dtype.numpy).reshape(self.dims)

    def tensor(self) -> Tensor:
        if self.dtype not in (WireDType.F32, WireDType.BF16E):
            raise FrameError(f"frame dtype {self.dtype.name} is not a float tensor")
        return Tensor(self.array(), DType(int(self.dtype)))

    def control(self) -> tuple[Opcode, dict]:
        if self.kind is not PayloadKind.CONTROL:
            raise FrameError(f"expected a control frame, got {self.kind.name}")
        raw = bytes(self.payload)
        body = json.loads(raw[1:].decode()) if len(raw) > 1 else {}
        return Opcode(raw[0]), body


def encode_header(frame: Frame, sequence: int) -> bytes:
    rank = len(frame.dims)
    if not 1 <= rank <= MAX_RANK:
        raise FrameError(f"frame rank must be in [1, {MAX_RANK}], got {rank}")
    head = _PREFIX.pack(FRAME_MAGIC, sequence, int(frame.kind), int(frame.dtype), rank)
    head += struct.pack(f"<{rank}I", *frame.dims)
    head += struct.pack("<Q", frame.payload_bytes)
    return head + struct.pack("<I", zlib.crc32(head))


def decode_header(buf, offset: int = 0) -> tuple[int, PayloadKind, WireDType, tuple[int, ...], int, int]:
    """Parse a header at ``offset``.

    Returns ``(sequence, kind, dtype, dims, payload_bytes, header_len)``.
    Raises :class:`FrameError` on bad magic, bad checksum or inconsistent sizes.
    """
    magic, seq, kind, dtype, rank = _PREFIX.unpack_from(buf, offset)
    if magic != FRAME_MAGIC:
        raise FrameError(f"bad frame magic 0x{magic:08x} at offset {offset}")
    if not 1 <= rank <= MAX_RANK:
        raise FrameError(f"bad frame rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", buf, offset + _PREFIX.size)
    payload_bytes, crc = _SUFFIX.unpack_from(buf, offset + _PREFIX.size + 4 * rank)
    hlen = header_size(rank)
    if zlib.crc32(bytes(buf[offset : offset + hlen - 4])) != crc:
        raise FrameError(f"header checksum mismatch for sequence {seq}")
    try:
        kind_e, dtype_e = PayloadKind(kind), WireDType(dtype)
    except ValueError as e:
        raise FrameError(str(e)) from None
    if int(np.prod(dims, dtype=np.int64)) * dtype_e.itemsize != payload_bytes:
        raise FrameError(f"payload_bytes {payload_bytes} inconsistent with dims {dims}")
    return seq, kind_e, dtype_e, tuple(dims), payload_bytes, hlen


def encode_frame(frame: Frame, sequence: int | None = None) -> bytes:
    seq = frame.sequence if sequence is None else sequence
    return encode_header(frame, seq or 0) + bytes(frame.payload)


def decode_frame(data: bytes) -> Frame:
    seq, kind, dtype, dims, nbytes, hlen = decode_header(data)
    payload = bytes(data[hlen : hlen + nbytes])
    if len(payload) != nbytes:
        raise FrameError("truncated frame payload")
    return Frame(kind, dtype, dims, payload, seq)


# -- constructors -------------------------------------------------------------------


def tensor_frame(t: Tensor, kind: PayloadKind = PayloadKind.HIDDEN, sequence: int | None = None) -> Frame:
    return Frame(kind, WireDType(int(t.dtype)), t.shape, memoryview(t.data).cast("B"), sequence)


def tokens_frame(ids: np.ndarray, sequence: int | None = None) -> Frame:
    arr = np.ascontiguousarray(ids, dtype="<i4")
    return Frame(PayloadKind.TOKENS, WireDType.I32, arr.shape, arr.tobytes(), sequence)


def control_frame(op: Opcode, body: dict | None = None, sequence: int | None = None) -> Frame:
    raw = bytes([int(op)])
    if body:
        raw += json.dumps(body, sort_keys=True).encode()
    return Frame(PayloadKind.CONTROL, WireDType.U8, (len(raw),), raw, sequence)

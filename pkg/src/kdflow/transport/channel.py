"""Single-producer / single-consumer ring buffer over a shared segment.

Segment layout::

    [0, 256)          control block (u64 words; cursors on separate cache lines)
    [256, 256 + cap)  data ring, cap a power of two

Cursors are monotonically increasing byte counts; the ring offset is
``cursor & (cap - 1)``. Records (frame header + payload, padded to 8 bytes)
never wrap: when a record does not fit before the end of the ring the
producer writes a pad marker and continues at offset 0.

Ordering: the producer writes header and payload first and publishes the
write cursor last; the consumer loads the write cursor before touching the
payload. Cursor words are aligned 8-byte stores, which are single
instructions on the platforms we target, and CPython's GIL (thread mode) or
x86 store ordering (process mode) supply the release/acquire pairing.

The read cursor published to the producer only advances past a record once
the consumer has released it, which is what makes :meth:`Channel.recv_view`
zero-copy: the producer cannot reclaim bytes a view still points at.
"""

from __future__ import annotations

import collections
import struct
import threading
import time
from dataclasses import dataclass, field
from multiprocessing import resource_tracker, shared_memory

import numpy as np

from .frame import Frame, FrameError, PayloadKind, WireDType, decode_header, encode_header

CTRL_BYTES = 256
MIN_CAPACITY = 1 << 20
DEFAULT_CAPACITY = 256 << 20
CHANNEL_MAGIC = 0x314E4843444B  # "KDCHN1"
PAD_MARKER = 0x44415050  # "PPAD"

_W_MAGIC, _W_CAPACITY, _W_POISON, _W_GENERATION = 0, 1, 2, 3
_W_WRITE = 8  # byte offset 64
_W_READ = 16  # byte offset 128


class ChannelError(RuntimeError):
    pass


class ChannelExistsError(ChannelError):
    pass


class ChannelNotFoundError(ChannelError):
    pass


class ChannelMapError(ChannelError):
    pass


class OversizeError(ChannelError):
    pass


class ChannelTimeout(ChannelError, TimeoutError):
    pass


class ChannelCorrupted(ChannelError):
    """Header validation failed; the channel is poisoned for both ends."""


class ViewLimitError(ChannelError):
    pass


def channel_name(run_id: str, src: str, dst: str) -> str:
    return f"kdflow.{run_id}.{src}-{dst}"


def _align8(n: int) -> int:
    return (n + 7) & ~7


# -- segment backends ----------------------------------------------------------------

_LOCAL: dict[str, bytearray] = {}
_LOCAL_LOCK = threading.Lock()


class _LocalSegment:
    """In-process segment for thread-mode actors and tests."""

    def __init__(self, name: str, size: int | None):
        with _LOCAL_LOCK:
            if size is not None:
                if name in _LOCAL:
                    raise ChannelExistsError(f"channel {name!r} already exists")
                _LOCAL[name] = bytearray(size)
            elif name not in _LOCAL:
                raise ChannelNotFoundError(f"channel {name!r} does not exist")
            self._buf = _LOCAL[name]
        self.name = name
        self.buf = memoryview(self._buf)

    def close(self):
        self.buf.release()

    def unlink(self):
        with _LOCAL_LOCK:
            _LOCAL.pop(self.name, None)


_CREATED_HERE: set[str] = set()


class _SharedSegment:
    def __init__(self, name: str, size: int | None):
        try:
            if size is not None:
                self._shm = shared_memory.SharedMemory(name=name, create=True, size=size)
                _CREATED_HERE.add(name)
            else:
                self._shm = shared_memory.SharedMemory(name=name)
                if name not in _CREATED_HERE:
                    # attaching processes must not unlink the segment when they exit
                    resource_tracker.unregister(self._shm._name, "shared_memory")
        except FileExistsError:
            raise ChannelExistsError(f"channel {name!r} already exists") from None
        except FileNotFoundError:
            raise ChannelNotFoundError(f"channel {name!r} does not exist") from None
        except (OSError, ValueError) as e:
            raise ChannelMapError(f"cannot map channel {name!r}: {e}") from e
        self.name = name
        self.buf = self._shm.buf

    def close(self):
        try:
            self._shm.close()
        except BufferError:
            # views still exported by the consumer; the mapping dies with them
            pass

    def unlink(self):
        _CREATED_HERE.discard(self.name)
        try:
            self._shm.unlink()
        except FileNotFoundError:
            pass


# -- channel ---------------------------------------------------------------------------


@dataclass
class ChannelStats:
    frames_sent: int = 0
    frames_received: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0
    bytes_copied: int = 0


@dataclass
class FrameView:
    """A received frame whose payload points into the shared segment.

    Call :meth:`release` (or use as a context manager) once the payload is no
    longer needed; until then the producer cannot overwrite it.
    """

    frame: Frame
    _entry: list = field(repr=False)
    _channel: Channel = field(repr=False)

    @property
    def sequence(self) -> int:
        return self.frame.sequence

    def array(self) -> np.ndarray:
        return self.frame.array()

    def release(self) -> None:
        self._channel._release(self._entry)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.release()


class Channel:
    def __init__(self, segment, role: str, owner: bool):
        self._seg = segment
        self.name = segment.name
        self.role = role
        self.owner = owner
        buf = segment.buf
        self._ctrl = np.ndarray((CTRL_BYTES // 8,), dtype=np.uint64, buffer=buf, offset=0)
        if int(self._ctrl[_W_MAGIC]) != CHANNEL_MAGIC:
            raise ChannelMapError(f"segment {self.name!r} is not an initialised channel")
        self.capacity = int(self._ctrl[_W_CAPACITY])
        self._mask = self.capacity - 1
        self._data = buf[CTRL_BYTES : CTRL_BYTES + self.capacity]
        self._data_np = np.ndarray((self.capacity,), dtype=np.uint8, buffer=buf, offset=CTRL_BYTES)
        self.stats = ChannelStats()
        self.max_views = 8
        self._last_seq = 0
        self._write = int(self._ctrl[_W_WRITE])
        self._read = int(self._ctrl[_W_READ])
        self._held: collections.deque[list] = collections.deque()

    # -- shared state ----------------------------------------------------------

    @property
    def write_cursor(self) -> int:
        return int(self._ctrl[_W_WRITE])

    @property
    def read_cursor(self) -> int:
        return int(self._ctrl[_W_READ])

    @property
    def poisoned(self) -> bool:
        return bool(self._ctrl[_W_POISON])

    def _poison(self, msg: str):
        self._ctrl[_W_POISON] = 1
        raise ChannelCorrupted(f"{self.name}: {msg}")

    def _check_poison(self):
        if self.poisoned:
            raise ChannelCorrupted(f"{self.name}: channel is poisoned")

    @staticmethod
    def _backoff(i: int):
        time.sleep(0 if i < 16 else min(1e-3, 1e-5 * (1 << min(i - 16, 7))))

    # -- producer ----------------------------------------------------------------

    def free_bytes(self) -> int:
        return self.capacity - (self._write - int(self._ctrl[_W_READ]))

    def _wait_free(self, need: int, deadline: float | None):
        i = 0
        while self.free_bytes() < need:
            self._check_poison()
            if deadline is not None and time.monotonic() >= deadline:
                raise ChannelTimeout(f"{self.name}: send timed out waiting for {need} free bytes")
            self._backoff(i)
            i += 1

    def send(self, frame: Frame, timeout: float | None = None) -> int:
        """Append ``frame``; blocks while the ring lacks space. Returns its sequence."""
        if self.role != "producer":
            raise ChannelError(f"{self.name}: send on a {self.role} end")
        self._check_poison()
        seq = self._last_seq + 1 if frame.sequence is None else int(frame.sequence)
        if seq <= self._last_seq:
            raise FrameError(f"sequence {seq} does not increase past {self._last_seq}")
        header = encode_header(frame, seq)
        nbytes = frame.payload_bytes
        payload = frame.payload
        if len(memoryview(payload).cast("B")) != nbytes:
            raise FrameError(f"payload length {len(payload)} != {nbytes} implied by dims {frame.dims}")
        rec = _align8(len(header) + nbytes)
        if rec > self.capacity:
            raise OversizeError(f"{self.name}: frame of {rec} bytes exceeds capacity {self.capacity}")

        deadline = None if timeout is None else time.monotonic() + timeout
        pos = self._write & self._mask
        room = self.capacity - pos
        if rec > room:
            self._wait_free(room, deadline)
            struct.pack_into("<I", self._data, pos, PAD_MARKER)
            self._write += room
            self._ctrl[_W_WRITE] = self._write
            pos = 0
        self._wait_free(rec, deadline)
        hlen = len(header)
        self._data_np[pos : pos + hlen] = np.frombuffer(header, dtype=np.uint8)
        if nbytes:
            self._data_np[pos + hlen : pos + hlen + nbytes] = np.frombuffer(payload, dtype=np.uint8)
        self._write += rec
        self._ctrl[_W_WRITE] = self._write  # publish last
        self._last_seq = seq
        self.stats.frames_sent += 1
        self.stats.bytes_sent += nbytes
        return seq

    # -- consumer ----------------------------------------------------------------

    def _next_header(self, timeout: float | None):
        if self.role != "consumer":
            raise ChannelError(f"{self.name}: receive on a {self.role} end")
        deadline = None if timeout is None else time.monotonic() + timeout
        i = 0
        while True:
            self._check_poison()
            w = int(self._ctrl[_W_WRITE])
            if w > self._read:
                pos = self._read & self._mask
                if self.capacity - pos < 4 or struct.unpack_from("<I", self._data, pos)[0] == PAD_MARKER:
                    self._advance(self._read + self.capacity - pos)
                    continue
                try:
                    seq, kind, dtype, dims, nbytes, hlen = decode_header(self._data, pos)
                except (FrameError, struct.error) as e:
                    self._poison(f"corrupt frame at cursor {self._read}: {e}")
                end = self._read + _align8(hlen + nbytes)
                if end > w or pos + hlen + nbytes > self.capacity:
                    self._poison(f"frame at cursor {self._read} overruns published data")
                if seq <= self._last_seq:
                    self._poison(f"sequence {seq} after {self._last_seq}")
                return seq, kind, dtype, dims, nbytes, pos + hlen, end
            if deadline is not None and time.monotonic() >= deadline:
                raise ChannelTimeout(f"{self.name}: no frame within {timeout}s")
            self._backoff(i)
            i += 1

    def _advance(self, end: int):
        self._held.append([end, True])
        self._read = end
        self._reclaim()

    def _reclaim(self):
        published = None
        while self._held and self._held[0][1]:
            published = self._held.popleft()[0]
        if published is not None:
            self._ctrl[_W_READ] = published

    def _release(self, entry: list):
        if not entry[1]:
            entry[1] = True
            self._reclaim()

    def recv(self, timeout: float | None = None) -> Frame:
        """Next frame with its payload copied out of the ring."""
        seq, kind, dtype, dims, nbytes, start, end = self._next_header(timeout)
        payload = bytes(self._data[start : start + nbytes])
        self.stats.bytes_copied += nbytes
        self._finish(seq, nbytes)
        self._advance(end)
        return Frame(kind, dtype, dims, payload, seq)

    def held_bytes(self) -> int:
        return self._read - int(self._ctrl[_W_READ])

    def outstanding_views(self) -> int:
        return sum(1 for e in self._held if not e[1])

    def recv_view(self, timeout: float | None = None) -> FrameView:
        """Next frame as a read-only view into the segment (no payload copy)."""
        if self.outstanding_views() >= self.max_views:
            raise ViewLimitError(f"{self.name}: {self.max_views} views outstanding; release some first")
        if self.held_bytes() >= self.capacity // 2:
            raise ViewLimitError(
                f"{self.name}: views hold {self.held_bytes()} of {self.capacity} bytes; "
                "receiving more could starve the producer"
            )
        seq, kind, dtype, dims, nbytes, start, end = self._next_header(timeout)
        view = self._data[start : start + nbytes].toreadonly()
        self._finish(seq, nbytes)
        entry = [end, False]
        self._held.append(entry)
        self._read = end
        return FrameView(Frame(kind, dtype, dims, view, seq), entry, self)

    def _finish(self, seq: int, nbytes: int):
        self._last_seq = seq
        self.stats.frames_received += 1
        self.stats.bytes_received += nbytes

    # -- lifecycle ---------------------------------------------------------------

    def close(self):
        self._ctrl = None
        self._data_np = None
        try:
            self._data.release()
        except BufferError:
            pass
        self._seg.close()

    def unlink(self):
        self._seg.unlink()

    def __repr__(self):
        return f"Channel({self.name!r}, role={self.role}, capacity={self.capacity})"


def _segment(name: str, size: int | None, shared: bool):
    return _SharedSegment(name, size) if shared else _LocalSegment(name, size)


def channel_create(name: str, capacity: int = DEFAULT_CAPACITY, shared: bool = True) -> Channel:
    """Create a segment and return its producer end; cursors start at zero."""
    if capacity < MIN_CAPACITY or capacity & (capacity - 1):
        raise ValueError(f"capacity must be a power of two >= {MIN_CAPACITY}, got {capacity}")
    seg = _segment(name, CTRL_BYTES + capacity, shared)
    ctrl = np.ndarray((CTRL_BYTES // 8,), dtype=np.uint64, buffer=seg.buf)
    ctrl[:] = 0
    ctrl[_W_CAPACITY] = capacity
    ctrl[_W_MAGIC] = CHANNEL_MAGIC
    del ctrl
    return Channel(seg, "producer", owner=True)


def channel_attach(name: str, role: str = "consumer", shared: bool = True) -> Channel:
    """Attach to an existing segment (consumer end by default)."""
    if role not in ("producer", "consumer"):
        raise ValueError(f"role must be 'producer' or 'consumer', got {role!r}")
    ch = Channel(_segment(name, None, shared), role, owner=False)
    if ch.poisoned:
        ch.close()
        raise ChannelCorrupted(f"{name}: channel is poisoned")
    if role == "consumer":
        ch._ctrl[_W_GENERATION] = int(ch._ctrl[_W_GENERATION]) + 1
    return ch


def frame_for(array: np.ndarray, kind: PayloadKind, dtype: WireDType, sequence: int | None = None) -> Frame:
    arr = np.ascontiguousarray(array, dtype=dtype.numpy)
    return Frame(kind, dtype, arr.shape, memoryview(arr).cast("B"), sequence)

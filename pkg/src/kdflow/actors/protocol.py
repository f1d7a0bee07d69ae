"""Channel topology and message helpers shared by every actor.

Sequence number 1 on each channel is reserved for the startup handshake;
controller-issued request ids start at :data:`FIRST_REQUEST_SEQ` and are
shared between the teacher and student copies of a micro-batch, so a hidden
frame always carries the sequence of the token frame it answers.
"""

from __future__ import annotations

import zlib

import numpy as np

from ..model import ModelWeights
from ..tensor import Tensor
from ..transport import (
    Channel,
    Frame,
    Opcode,
    PayloadKind,
    channel_attach,
    channel_create,
    channel_name,
    control_frame,
    tensor_frame,
)

FIRST_REQUEST_SEQ = 2

# (src, dst) for every link; the controller creates all of them.
LINKS = {
    "off_policy": [
        ("controller", "teacher"),
        ("teacher", "student"),
        ("teacher", "controller"),
        ("controller", "student"),
        ("student", "controller"),
    ],
}
LINKS["on_policy"] = LINKS["off_policy"] + [
    ("controller", "rollout"),
    ("rollout", "controller"),
    ("student", "rollout"),
]

# exit codes for actor processes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_STARTUP = 3


class ActorError(RuntimeError):
    pass


def create_links(run_id: str, workflow: str, capacity: int, shared: bool) -> dict[tuple[str, str], Channel]:
    made = {}
    try:
        for src, dst in LINKS[workflow]:
            made[(src, dst)] = channel_create(channel_name(run_id, src, dst), capacity, shared=shared)
    except Exception:
        for ch in made.values():
            ch.close()
            ch.unlink()
        raise
    return made


def attach(run_id: str, src: str, dst: str, role: str, shared: bool) -> Channel:
    return channel_attach(channel_name(run_id, src, dst), role=role, shared=shared)


def weights_crc(weights: ModelWeights) -> int:
    crc = 0
    for arr in weights.params.values():
        crc = zlib.crc32(memoryview(np.ascontiguousarray(arr)).cast("B"), crc)
    return crc


def send_weights(ch: Channel, weights: ModelWeights, version: int, limit: int | None = None,
                 timeout: float | None = None) -> int:
    """Ship every parameter then a commit record. ``limit`` truncates the
    parameter stream (fault injection: a torn transfer)."""
    items = list(weights.named_tensors())
    for i, (_, t) in enumerate(items):
        if limit is not None and i >= limit:
            break
        ch.send(tensor_frame(t, PayloadKind.WEIGHTS), timeout=timeout)
    crc = weights_crc(weights)
    ch.send(control_frame(Opcode.COMMIT, {"version": version, "count": len(items), "crc": crc}), timeout=timeout)
    return crc


def control(ch: Channel, op: Opcode, body: dict | None = None, sequence: int | None = None,
            timeout: float | None = None) -> int:
    return ch.send(control_frame(op, body, sequence), timeout=timeout)


def is_control(frame: Frame, op: Opcode | None = None) -> bool:
    if frame.kind is not PayloadKind.CONTROL:
        return False
    return op is None or frame.control()[0] is op


def tensor_of(frame: Frame) -> Tensor:
    return frame.tensor()

"""Run lifecycle: links, actor launch, message pumping, shutdown.

The controller is workflow-agnostic; the training loops in
``kdflow.workflows`` drive it through a handful of request/collect calls.
"""

from __future__ import annotations

import os
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..transport import ChannelTimeout, Frame, Opcode, PayloadKind, frame_for, tokens_frame, WireDType
from .base import log
from .protocol import FIRST_REQUEST_SEQ, ActorError, LINKS, attach, control, create_links
from .spawn import spawn

POLL_S = 0.002


class ActorDied(ActorError):
    pass


def new_run_id() -> str:
    return os.environ.get("KDFLOW_RUN_ID") or f"{os.getpid()}-{uuid.uuid4().hex[:8]}"


@dataclass
class Responses:
    version: int
    lengths: list[int]
    rollout_crc: int
    tokens: np.ndarray | None = None

    def sequences(self) -> list[list[int]]:
        return [self.tokens[i, :n].tolist() for i, n in enumerate(self.lengths)]


@dataclass
class _Inbox:
    ready: set = field(default_factory=set)
    metrics: deque = field(default_factory=deque)
    timings: dict = field(default_factory=dict)
    responses: deque = field(default_factory=deque)
    resyncs: deque = field(default_factory=deque)
    partial: Responses | None = None


class Controller:
    def __init__(self, config, run_id: str | None = None, config_path: str | None = None):
        self.config = config
        self.run_id = run_id or new_run_id()
        self.config_path = config_path
        self.roles = ["teacher", "student"] + (["rollout"] if config.workflow == "on_policy" else [])
        self.links = {}
        self.inbound = {}
        self.handles = {}
        self.inbox = _Inbox()
        self._seq = FIRST_REQUEST_SEQ - 1
        self._last_progress = time.monotonic()

    # -- lifecycle -------------------------------------------------------------

    def start(self):
        cfg = self.config
        shared = cfg.actor_mode == "process"
        if shared and self.config_path is None:
            out = Path(cfg.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            self.config_path = str(out / "run_config.json")
            cfg.save(self.config_path)
        self.links = create_links(self.run_id, cfg.workflow, cfg.channel_capacity, shared)
        for src, dst in LINKS[cfg.workflow]:
            if dst == "controller":
                self.inbound[src] = attach(self.run_id, src, dst, "consumer", shared)
        for role in self.roles:
            self.handles[role] = spawn(role, cfg, self.run_id, self.config_path)
        self.pump(lambda: self.inbox.ready >= set(self.roles), "actor startup")

    def shutdown(self, checkpoint: str | None = None, timeout: float = 30.0):
        """Ask every actor to stop; the student writes ``checkpoint`` first."""
        for role in self.roles:
            body = {"checkpoint": checkpoint} if role == "student" and checkpoint else None
            if self.handles.get(role) is not None and self.handles[role].alive():
                control(self.links[("controller", role)], Opcode.SHUTDOWN, body, self.next_seq(), timeout=timeout)
        deadline = time.monotonic() + timeout
        for role, h in self.handles.items():
            if not h.join(max(0.0, deadline - time.monotonic())):
                raise ActorDied(f"{role} did not exit within {timeout}s of shutdown")
            if h.failure:
                raise ActorDied(f"{role} failed: {h.failure}")

    def close(self):
        for h in self.handles.values():
            h.kill()
        for ch in self.inbound.values():
            ch.close()
        for ch in self.links.values():
            ch.close()
            ch.unlink()
        self.inbound.clear()
        self.links.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- messaging ---------------------------------------------------------------

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _handle(self, src: str, frame: Frame):
        box = self.inbox
        if frame.kind is PayloadKind.TOKENS and src == "rollout" and box.partial is not None:
            box.partial.tokens = frame.array()
            box.responses.append(box.partial)
            box.partial = None
            return
        if frame.kind is not PayloadKind.CONTROL:
            raise ActorError(f"controller: unexpected {frame.kind.name} frame from {src}")
        op, body = frame.control()
        if op is Opcode.READY:
            box.ready.add(src)
        elif op is Opcode.ERROR:
            raise ActorError(f"{src} reported an error: {body.get('message', body)}")
        elif op is Opcode.TIMING:
            box.timings[int(body["seq"])] = float(body["t_ms"])
        elif op is Opcode.METRICS:
            box.metrics.append(body)
        elif op is Opcode.RESPONSES:
            box.partial = Responses(int(body["version"]), list(body["lengths"]), int(body["rollout_crc"]))
        elif op is Opcode.RESYNC:
            box.resyncs.append(body)
        else:
            raise ActorError(f"controller: unexpected opcode {op.name} from {src}")

    def _check_alive(self):
        for role, h in self.handles.items():
            if not h.alive():
                # drain whatever the actor said before it went away
                for src, ch in self.inbound.items():
                    while True:
                        try:
                            self._handle(src, ch.recv(timeout=0))
                        except ChannelTimeout:
                            break
                raise ActorDied(f"{role} actor exited unexpectedly ({h.failure or 'no error reported'})")

    def pump(self, until, what: str):
        """Process inbound messages until ``until()`` holds."""
        timeout = self.config.actor_timeout_s
        self._last_progress = time.monotonic()
        while not until():
            got = False
            for src, ch in self.inbound.items():
                try:
                    frame = ch.recv(timeout=0)
                except ChannelTimeout:
                    continue
                self._handle(src, frame)
                got = True
            if got:
                self._last_progress = time.monotonic()
                continue
            self._check_alive()
            if time.monotonic() - self._last_progress > timeout:
                raise ActorDied(f"no progress for {timeout}s while waiting for {what}")
            time.sleep(POLL_S)

    # -- requests ----------------------------------------------------------------

    def dispatch(self, micro_batches) -> list[int]:
        """Send each micro-batch to the teacher and (with its mask) to the student."""
        seqs = []
        to_teacher = self.links[("controller", "teacher")]
        to_student = self.links[("controller", "student")]
        for mb in micro_batches:
            seq = self.next_seq()
            to_teacher.send(tokens_frame(mb.tokens, seq))
            both = np.stack([mb.tokens, mb.loss_mask.astype(np.int32)])
            to_student.send(frame_for(both, PayloadKind.TOKENS, WireDType.I32, seq))
            seqs.append(seq)
        return seqs

    def collect(self, seqs: list[int]) -> tuple[dict, float]:
        """Wait for the student's metrics of one step and the teacher's timings."""
        box = self.inbox
        self.pump(lambda: box.metrics and all(s in box.timings for s in seqs), "step metrics")
        t_teacher = sum(box.timings.pop(s) for s in seqs)
        return box.metrics.popleft(), t_teacher

    def sync(self, version: int, limit: int | None = None):
        body = {"version": version}
        if limit is not None:
            body["limit"] = limit
        control(self.links[("controller", "student")], Opcode.SYNC, body, self.next_seq())

    def generate(self, step: int, expect_version: int, prompts: list[list[int]]) -> Responses:
        cfg = self.config
        lengths = [len(p) for p in prompts]
        padded = np.zeros((len(prompts), max(lengths)), np.int32)
        for i, p in enumerate(prompts):
            padded[i, : len(p)] = p
        ch = self.links[("controller", "rollout")]
        control(ch, Opcode.GENERATE, {"step": step, "expect_version": expect_version, "lengths": lengths}, self.next_seq())
        ch.send(tokens_frame(padded, self.next_seq()))
        box = self.inbox
        while True:
            self.pump(lambda: box.responses or box.resyncs, "rollout responses")
            if box.resyncs:
                req = box.resyncs.popleft()
                log.warning("rollout requested resync to version %s: %s", req.get("want"), req.get("reason"))
                self.sync(int(req["want"]))
                continue
            resp = box.responses.popleft()
            if resp.version != expect_version:
                raise ActorError(f"rollout answered with version {resp.version}, expected {expect_version}")
            return resp

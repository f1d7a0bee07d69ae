"""Training student: recomputes teacher logits from hidden states and learns."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from ..divergence import distill_step_loss
from ..engine import StudentEngine
from ..model import load_checkpoint, save_checkpoint
from ..transport import ChannelError, Frame, Opcode, PayloadKind, comm_volume
from .base import Actor, elapsed_ms, unexpected
from .protocol import ActorError, attach, control, send_weights, weights_crc


class StudentActor(Actor):
    role = "student"

    def __init__(self, config, run_id: str, shared: bool):
        super().__init__(config, run_id, shared)
        weights = load_checkpoint(config.student_checkpoint)
        self.engine = StudentEngine(weights, config.learning_rate, config.weight_decay)
        self.inbox = self._attach(attach(run_id, "controller", "student", "consumer", shared))
        self.hidden_in = self._attach(attach(run_id, "teacher", "student", "consumer", shared))
        self.to_controller = self._attach(attach(run_id, "student", "controller", "producer", shared))
        self.to_rollout = None
        if config.workflow == "on_policy":
            self.to_rollout = self._attach(attach(run_id, "student", "rollout", "producer", shared))
        self.teacher_head = None

    # -- step --------------------------------------------------------------------

    def train_step(self, batches: list[Frame]) -> dict:
        """One optimizer step over ``grad_accum`` micro-batches."""
        cfg = self.config
        t_start = time.perf_counter()
        t_transfer = 0.0
        bytes_hidden = 0
        bytes_logits = 0
        micro = []
        for f in batches:
            arr = f.array()
            micro.append((f.sequence, arr[0], arr[1].astype(np.float32)))
        denom = float(sum(int(m.sum()) for _, _, m in micro))
        for seq, tokens, mask in micro:
            t0 = time.perf_counter()
            view = self.recv(self.hidden_in, view=True)
            t_transfer += elapsed_ms(t0)
            try:
                if view.sequence != seq or view.frame.kind is not PayloadKind.HIDDEN:
                    raise ActorError(f"hidden frame sequence {view.sequence} does not match token batch {seq}")
                hidden = view.frame.tensor()
                b, t, d = hidden.shape
                bytes_hidden += view.frame.payload_bytes
                bytes_logits += comm_volume(b, t, self.teacher_head.shape[1], 4)
                self.engine.micro_step(
                    tokens,
                    lambda s: distill_step_loss(
                        hidden, self.teacher_head, s, cfg.kind, mask, cfg.temperature, denom, cfg.top_k
                    ),
                )
            finally:
                view.release()
            if cfg.student_delay_ms:
                time.sleep(cfg.student_delay_ms / 1000.0)
        res = self.engine.apply_update()
        metrics = {
            "loss": res.loss if res.updated else None,
            "grad_norm": res.grad_norm if res.updated else None,
            "t_student_ms": elapsed_ms(t_start) - t_transfer,
            "t_transfer_ms": t_transfer,
            "bytes_hidden": bytes_hidden,
            "bytes_logits_equiv": bytes_logits,
        }
        if cfg.workflow == "on_policy":
            metrics["student_crc"] = weights_crc(self.engine.weights)
        if res.error:
            metrics["error"] = res.error
        return metrics

    # -- main loop ---------------------------------------------------------------

    def run(self):
        cfg = self.config
        head = self.recv(self.hidden_in)
        if head.kind is not PayloadKind.WEIGHTS or head.sequence != 1:
            raise ActorError(unexpected(head, "student handshake"))
        self.teacher_head = head.tensor()
        control(self.to_controller, Opcode.READY, {"role": self.role})
        pending: list[Frame] = []
        while True:
            frame = self.recv(self.inbox)
            if frame.kind is PayloadKind.CONTROL:
                op, body = frame.control()
                if op is Opcode.SHUTDOWN:
                    if body.get("checkpoint"):
                        Path(body["checkpoint"]).parent.mkdir(parents=True, exist_ok=True)
                        save_checkpoint(self.engine.weights, body["checkpoint"])
                    return
                if op is Opcode.SYNC:
                    if self.to_rollout is None:
                        raise ActorError("SYNC requested but no rollout link exists")
                    send_weights(self.to_rollout, self.engine.weights, int(body["version"]),
                                 limit=body.get("limit"))
                continue
            if frame.kind is not PayloadKind.TOKENS:
                raise ChannelError(unexpected(frame, "student"))
            pending.append(frame)
            if len(pending) == cfg.grad_accum:
                metrics = self.train_step(pending)
                pending = []
                if not cfg.record_timings:
                    for k in ("t_student_ms", "t_transfer_ms"):
                        metrics[k] = 0.0
                control(self.to_controller, Opcode.METRICS, metrics)

"""Forward-only teacher: token batches in, final hidden states out."""

from __future__ import annotations

import os
import time

from ..model import forward_hidden, load_checkpoint
from ..tensor import Tensor
from ..transport import Opcode, PayloadKind, tensor_frame
from .base import Actor, elapsed_ms, log
from .protocol import attach, control


class TeacherActor(Actor):
    role = "teacher"

    def __init__(self, config, run_id: str, shared: bool):
        super().__init__(config, run_id, shared)
        self.weights = load_checkpoint(config.teacher_checkpoint).to(config.teacher_dtype)
        self.inbox = self._attach(attach(run_id, "controller", "teacher", "consumer", shared))
        self.to_student = self._attach(attach(run_id, "teacher", "student", "producer", shared))
        self.to_controller = self._attach(attach(run_id, "teacher", "controller", "producer", shared))
        self.served = 0

    def handle(self, ids) -> Tensor:
        return forward_hidden(self.weights, ids)

    def run(self):
        cfg = self.config
        # handshake: the LM head travels once, ahead of any hidden states
        self.to_student.send(tensor_frame(self.weights.lm_head(), PayloadKind.WEIGHTS, sequence=1))
        control(self.to_controller, Opcode.READY, {"role": self.role, "dtype": self.weights.dtype.name})
        while True:
            frame = self.recv(self.inbox)
            if frame.kind is PayloadKind.CONTROL:
                op, _ = frame.control()
                if op is Opcode.SHUTDOWN:
                    return
                continue
            if cfg.fault_teacher_after and self.served >= cfg.fault_teacher_after:
                log.error("teacher: injected fault after %d batches", self.served)
                if self.shared:
                    os._exit(17)
                raise RuntimeError("injected teacher fault")
            t0 = time.perf_counter()
            try:
                if frame.kind is not PayloadKind.TOKENS:
                    raise ValueError(f"expected TOKENS, got {frame.kind.name}")
                hidden = self.handle(frame.array())
            except Exception as e:  # report malformed requests, keep serving
                control(self.to_controller, Opcode.ERROR, {"role": self.role, "seq": frame.sequence, "message": str(e)})
                continue
            if cfg.teacher_delay_ms:
                time.sleep(cfg.teacher_delay_ms / 1000.0)
            t_ms = elapsed_ms(t0)
            self.to_student.send(tensor_frame(hidden, PayloadKind.HIDDEN, sequence=frame.sequence))
            control(self.to_controller, Opcode.TIMING, {"seq": frame.sequence, "t_ms": t_ms})
            self.served += 1

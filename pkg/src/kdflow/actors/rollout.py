"""Generation engine that follows the student through versioned weight syncs."""

from __future__ import annotations

import numpy as np

from ..model import ModelWeights, load_checkpoint, sample
from ..transport import Frame, Opcode, PayloadKind, tokens_frame
from .base import Actor, unexpected
from .protocol import ActorError, attach, control, weights_crc


def sample_seed(seed: int, step: int, index: int) -> int:
    """Per-sample generation seed derived from the run seed and position."""
    return int(np.random.SeedSequence([seed, step, index]).generate_state(1, np.uint64)[0])


def generate_batch(weights: ModelWeights, prompts, step: int, config) -> list[list[int]]:
    """Sample a response for every prompt; shared by the rollout actor and the oracle."""
    out = []
    for i, prompt in enumerate(prompts):
        prompt = list(prompt)[: config.max_len - 1]
        budget = min(config.max_new_tokens, config.max_len - len(prompt), weights.config.max_seq_len - len(prompt))
        if budget < 1:
            out.append([])
            continue
        out.append(sample(weights, prompt, budget, config.rollout_temperature,
                          sample_seed(config.seed, step, i), config.eos_id))
    return out


class WeightReceiver:
    """Stages incoming weight frames and swaps them in only on a valid commit.

    The live weights are replaced in a single assignment, so readers see
    either the old version or the new one, never a mixture.
    """

    def __init__(self, weights: ModelWeights, version: int = 0):
        self.weights = weights
        self.version = version
        self._names = [name for name, _ in weights.named_tensors()]
        self._staged: list[np.ndarray] = []

    def offer(self, frame: Frame) -> str | None:
        """Feed one frame. Returns None, "commit" or a rejection reason."""
        if frame.kind is PayloadKind.WEIGHTS:
            self._staged.append(np.array(frame.array(), dtype=np.float32))
            return None
        op, body = frame.control()
        if op is not Opcode.COMMIT:
            return f"unexpected {op.name} on the weight link"
        staged, self._staged = self._staged, []
        version = int(body["version"])
        if int(body["count"]) != len(staged) or len(staged) != len(self._names):
            return f"version {version}: got {len(staged)} of {body['count']} tensors"
        shapes = self.weights.config.param_shapes()
        params = {}
        for name, arr in zip(self._names, staged):
            if arr.shape != tuple(shapes[name]):
                return f"version {version}: tensor {name} has shape {arr.shape}"
            params[name] = arr
        candidate = self.weights.replace(params)
        if weights_crc(candidate) != int(body["crc"]):
            return f"version {version}: checksum mismatch"
        if version <= self.version:
            return f"version {version} is not newer than {self.version}"
        self.weights, self.version = candidate, version
        return "commit"


class RolloutActor(Actor):
    role = "rollout"

    def __init__(self, config, run_id: str, shared: bool):
        super().__init__(config, run_id, shared)
        self.receiver = WeightReceiver(load_checkpoint(config.rollout_ckpt))
        self.inbox = self._attach(attach(run_id, "controller", "rollout", "consumer", shared))
        self.weights_in = self._attach(attach(run_id, "student", "rollout", "consumer", shared))
        self.to_controller = self._attach(attach(run_id, "rollout", "controller", "producer", shared))

    def catch_up(self, version: int):
        while self.receiver.version < version:
            result = self.receiver.offer(self.recv(self.weights_in))
            if result not in (None, "commit"):
                control(self.to_controller, Opcode.RESYNC,
                        {"have": self.receiver.version, "want": version, "reason": result})

    def run(self):
        control(self.to_controller, Opcode.READY, {"role": self.role})
        while True:
            frame = self.recv(self.inbox)
            if frame.kind is not PayloadKind.CONTROL:
                raise ActorError(unexpected(frame, "rollout"))
            op, body = frame.control()
            if op is Opcode.SHUTDOWN:
                return
            if op is not Opcode.GENERATE:
                raise ActorError(f"rollout: unexpected opcode {op.name}")
            prompts_frame = self.recv(self.inbox)
            if prompts_frame.kind is not PayloadKind.TOKENS:
                raise ActorError(unexpected(prompts_frame, "rollout prompts"))
            padded = prompts_frame.array()
            prompts = [padded[i, :n].tolist() for i, n in enumerate(body["lengths"])]
            self.catch_up(int(body["expect_version"]))
            weights = self.receiver.weights
            responses = generate_batch(weights, prompts, int(body["step"]), self.config)
            lengths = [len(r) for r in responses]
            out = np.zeros((len(responses), max(1, max(lengths))), np.int32)
            for i, r in enumerate(responses):
                out[i, : len(r)] = r
            control(self.to_controller, Opcode.RESPONSES,
                    {"version": self.receiver.version, "lengths": lengths, "rollout_crc": weights_crc(weights)})
            self.to_controller.send(tokens_frame(out))

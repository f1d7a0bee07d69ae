"""Single-process reference distillation.

Teacher and student live in one process and teacher logits are computed
locally. The oracle reuses the batch builder, model, loss and optimizer code
of the pipeline, so any difference between the two isolates the transport.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .actors.protocol import weights_crc
from .actors.rollout import generate_batch
from .divergence import kd_loss, kd_loss_topk
from .engine import StudentEngine
from .model import ModelWeights, forward_logits, load_checkpoint, save_checkpoint
from .transport import comm_volume
from .workflows.config import KDRunConfig
from .workflows.data import GlobalBatch
from .workflows.metrics import MetricsLog, skipped_record, step_record
from .workflows.runner import clip_prompts, on_policy_batch, plan_run, sync_due

METRICS_FILE = "oracle_metrics.jsonl"
CHECKPOINT_FILE = "oracle_student.kdck"


@dataclass
class OracleState:
    config: KDRunConfig
    teacher: ModelWeights
    engine: StudentEngine
    step: int = 0

    @classmethod
    def create(cls, config: KDRunConfig) -> OracleState:
        teacher = load_checkpoint(config.teacher_checkpoint).to(config.teacher_dtype)
        student = load_checkpoint(config.student_checkpoint)
        return cls(config, teacher, StudentEngine(student, config.learning_rate, config.weight_decay))


def oracle_step(state: OracleState, batch: GlobalBatch) -> tuple[OracleState, dict]:
    """One optimizer step; returns the state and the student-side metrics."""
    cfg = state.config
    denom = batch.denom
    vocab = state.teacher.config.vocab_size
    t_teacher = t_student = 0.0
    bytes_hidden = bytes_logits = 0
    for mb in batch.micro:
        t0 = time.perf_counter()
        teacher_logits = forward_logits(state.teacher, mb.tokens)
        t1 = time.perf_counter()
        mask = mb.loss_mask

        def loss_fn(s, tl=teacher_logits, mask=mask):
            if cfg.top_k:
                return kd_loss_topk(cfg.kind, tl, cfg.top_k, s, mask, cfg.temperature, denom)
            return kd_loss(cfg.kind, tl, s, mask, cfg.temperature, denom)

        state.engine.micro_step(mb.tokens, loss_fn)
        t_teacher += t1 - t0
        t_student += time.perf_counter() - t1
        b, t = mb.tokens.shape
        bytes_hidden += b * t * state.teacher.config.d_model * 4
        bytes_logits += comm_volume(b, t, vocab, 4)
    res = state.engine.apply_update()
    state.step += 1
    metrics = {
        "loss": res.loss if res.updated else None,
        "grad_norm": res.grad_norm if res.updated else None,
        "t_teacher_ms": t_teacher * 1000.0,
        "t_student_ms": t_student * 1000.0,
        "t_transfer_ms": 0.0,
        "bytes_hidden": bytes_hidden,
        "bytes_logits_equiv": bytes_logits,
    }
    if cfg.workflow == "on_policy":
        metrics["student_crc"] = weights_crc(state.engine.weights)
    if res.error:
        metrics["error"] = res.error
    return state, metrics


def oracle_run(config: KDRunConfig, metrics_name: str = METRICS_FILE,
               checkpoint_name: str | None = CHECKPOINT_FILE) -> list[dict]:
    """Run the whole workflow in-process; writes the same log format as the pipeline."""
    plan = plan_run(config)
    state = OracleState.create(config)
    rollout = load_checkpoint(config.rollout_ckpt) if config.workflow == "on_policy" else None
    version = 0
    out = Path(config.output_dir)
    with MetricsLog(out / metrics_name) as log:
        for step in range(config.total_steps):
            if rollout is None:
                gb = plan.builder.batch(step)
                state, metrics = oracle_step(state, gb)
                log.write(step_record(config, step, gb.epoch, metrics, metrics["t_teacher_ms"]))
                continue
            epoch, prompts = plan.builder.prompts(step)
            prompts = clip_prompts(prompts, config.max_len)
            responses = generate_batch(rollout, prompts, step, config)
            gb = on_policy_batch(plan, step, epoch, prompts, responses)
            crc = weights_crc(rollout)
            if gb.denom == 0:
                log.write(skipped_record(config, step, epoch, version, rollout_crc=crc))
            else:
                state, metrics = oracle_step(state, gb)
                log.write(step_record(config, step, epoch, metrics, metrics["t_teacher_ms"], version, rollout_crc=crc))
            new_version = sync_due(step, config)
            if new_version is not None:
                rollout, version = state.engine.weights, new_version
        records = log.records
    if checkpoint_name:
        save_checkpoint(state.engine.weights, out / checkpoint_name)
    return records

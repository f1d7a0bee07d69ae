"""Off-policy and on-policy training loops driven through the controller."""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from ..actors import Controller
from ..model import load_checkpoint
from .config import ConfigError, KDRunConfig
from .data import BatchBuilder, GlobalBatch, KDSample, collate, load_dataset
from .metrics import MetricsLog, skipped_record, step_record

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "student_final.kdck"


@dataclass
class RunResult:
    records: list[dict]
    step_times: list[float] = field(default_factory=list)
    wall_s: float = 0.0
    metrics_path: Path | None = None


@dataclass
class RunPlan:
    """Everything both the pipeline and the oracle derive from a config."""

    config: KDRunConfig
    builder: BatchBuilder
    teacher_dim: int
    vocab_size: int


def plan_run(config: KDRunConfig) -> RunPlan:
    teacher = load_checkpoint(config.teacher_checkpoint).config
    student = load_checkpoint(config.student_checkpoint).config
    config.check_models(teacher, student)
    if config.workflow == "on_policy":
        rollout = load_checkpoint(config.rollout_ckpt).config
        if rollout != student:
            raise ConfigError("rollout_checkpoint", "rollout model must share the student architecture")
    samples = load_dataset(config.dataset_path)
    builder = BatchBuilder(samples, config.global_batch, config.grad_accum, config.max_len,
                           teacher.vocab_size, config.seed)
    return RunPlan(config, builder, teacher.d_model, teacher.vocab_size)


def clip_prompts(prompts, max_len: int) -> list[list[int]]:
    """Prompts keep at least one slot free for a generated token."""
    return [list(p)[: max_len - 1] for p in prompts]


def on_policy_batch(plan: RunPlan, step: int, epoch: int, prompts, responses) -> GlobalBatch:
    """Prompt plus generated tokens; only generated tokens are scored."""
    cfg = plan.config
    samples = [KDSample(tuple(p), tuple(r)) for p, r in zip(prompts, responses)]
    return collate(samples, cfg.grad_accum, cfg.max_len, plan.vocab_size, step, epoch)


def sync_due(step: int, config: KDRunConfig) -> int | None:
    """Version to publish after ``step``, or None between syncs."""
    if (step + 1) % config.sync_interval == 0:
        return (step + 1) // config.sync_interval
    return None


def _off_policy(ctl: Controller, plan: RunPlan, log: MetricsLog, result: RunResult):
    cfg = plan.config
    pending = deque()

    def issue(step):
        gb = plan.builder.batch(step)
        pending.append((gb, ctl.dispatch(gb.micro)))

    if cfg.total_steps:
        issue(0)
    for step in range(cfg.total_steps):
        if step + 1 < cfg.total_steps:
            issue(step + 1)  # double buffering: the teacher runs ahead by one step
        gb, seqs = pending.popleft()
        metrics, t_teacher = ctl.collect(seqs)
        log.write(step_record(cfg, step, gb.epoch, metrics, t_teacher))
        result.step_times.append(time.monotonic())


def _on_policy(ctl: Controller, plan: RunPlan, log: MetricsLog, result: RunResult):
    cfg = plan.config
    for step in range(cfg.total_steps):
        epoch, prompts = plan.builder.prompts(step)
        prompts = clip_prompts(prompts, cfg.max_len)
        version = step // cfg.sync_interval
        resp = ctl.generate(step, version, prompts)
        gb = on_policy_batch(plan, step, epoch, prompts, resp.sequences())
        if gb.denom == 0:
            log.write(skipped_record(cfg, step, epoch, resp.version, rollout_crc=resp.rollout_crc))
        else:
            metrics, t_teacher = ctl.collect(ctl.dispatch(gb.micro))
            log.write(step_record(cfg, step, epoch, metrics, t_teacher, resp.version, rollout_crc=resp.rollout_crc))
        result.step_times.append(time.monotonic())
        new_version = sync_due(step, cfg)
        if new_version is not None:
            torn = cfg.fault_torn_sync_version and new_version == cfg.fault_torn_sync_version
            ctl.sync(new_version, limit=1 if torn else None)


def run_workflow(config: KDRunConfig, run_id: str | None = None, config_path: str | None = None,
                 metrics_name: str = METRICS_FILE) -> RunResult:
    """Launch actors, run ``config.total_steps`` steps, write the log and final checkpoint."""
    plan = plan_run(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = RunResult([], metrics_path=out / metrics_name)
    t0 = time.monotonic()
    with MetricsLog(result.metrics_path) as log, Controller(config, run_id, config_path) as ctl:
        ctl.start()
        if config.workflow == "on_policy":
            _on_policy(ctl, plan, log, result)
        else:
            _off_policy(ctl, plan, log, result)
        ctl.shutdown(checkpoint=str(out / CHECKPOINT_FILE))
        result.records = log.records
    result.wall_s = time.monotonic() - t0
    return result


def run_off_policy(config: KDRunConfig, **kwargs) -> RunResult:
    if config.workflow != "off_policy":
        raise ConfigError("workflow", f"expected off_policy, got {config.workflow!r}")
    return run_workflow(config, **kwargs)


def run_on_policy(config: KDRunConfig, **kwargs) -> RunResult:
    if config.workflow != "on_policy":
        raise ConfigError("workflow", f"expected on_policy, got {config.workflow!r}")
    return run_workflow(config, **kwargs)

"""Pipelined vs serialized throughput under synthetic per-batch compute delays."""

from __future__ import annotations

import time
from fractions import Fraction

from ..divergence import distill_step_loss
from ..engine import StudentEngine
from ..model import forward_hidden, load_checkpoint
from .config import KDRunConfig
from .runner import plan_run, run_workflow


def _steady_rate(times: list[float]) -> float:
    """Steps per second between the first and last completion."""
    if len(times) < 2 or times[-1] <= times[0]:
        return float("nan")
    return (len(times) - 1) / (times[-1] - times[0])


def run_serialized(config: KDRunConfig) -> tuple[list[float], float, float]:
    """Every role in one thread, strictly one stage after another.

    Returns step completion times, total teacher seconds and wall seconds.
    """
    plan = plan_run(config)
    teacher = load_checkpoint(config.teacher_checkpoint).to(config.teacher_dtype)
    head = teacher.lm_head()
    engine = StudentEngine(load_checkpoint(config.student_checkpoint), config.learning_rate, config.weight_decay)
    times, t_teacher = [], 0.0
    start = time.monotonic()
    for step in range(config.total_steps):
        gb = plan.builder.batch(step)
        denom = gb.denom
        for mb in gb.micro:
            t0 = time.perf_counter()
            hidden = forward_hidden(teacher, mb.tokens)
            if config.teacher_delay_ms:
                time.sleep(config.teacher_delay_ms / 1000.0)
            t_teacher += time.perf_counter() - t0
            engine.micro_step(
                mb.tokens,
                lambda s, h=hidden, m=mb.loss_mask: distill_step_loss(
                    h, head, s, config.kind, m, config.temperature, denom, config.top_k
                ),
            )
            if config.student_delay_ms:
                time.sleep(config.student_delay_ms / 1000.0)
        engine.apply_update()
        times.append(time.monotonic())
    return times, t_teacher, time.monotonic() - start


def bench_pipeline(config: KDRunConfig, teacher_delay_ms: float, student_delay_ms: float,
                   steps: int | None = None) -> dict:
    cfg = config.replace(
        workflow="off_policy",
        actor_mode="thread",
        teacher_delay_ms=float(teacher_delay_ms),
        student_delay_ms=float(student_delay_ms),
        record_timings=True,
        total_steps=steps if steps is not None else config.total_steps,
        fault_teacher_after=0,
    )
    if cfg.total_steps < 2:
        raise ValueError("the benchmark needs at least 2 steps")
    plan = plan_run(cfg)

    piped = run_workflow(cfg, metrics_name="bench_metrics.jsonl")
    span = piped.step_times[-1] - piped.step_times[0]
    teacher_ms = sum(r["t_teacher_ms"] for r in piped.records[1:])
    occ_piped = min(1.0, teacher_ms / 1000.0 / span) if span > 0 else float("nan")

    ser_times, ser_teacher_s, ser_wall = run_serialized(cfg)
    occ_ser = ser_teacher_s / ser_wall if ser_wall > 0 else float("nan")

    rate_p, rate_s = _steady_rate(piped.step_times), _steady_rate(ser_times)
    bytes_hidden = sum(r["bytes_hidden"] for r in piped.records) // len(piped.records)
    bytes_logits = sum(r["bytes_logits_equiv"] for r in piped.records) // len(piped.records)
    ratio = Fraction(bytes_logits, bytes_hidden) if bytes_hidden else Fraction(0)
    return {
        "steps": cfg.total_steps,
        "teacher_delay_ms": cfg.teacher_delay_ms,
        "student_delay_ms": cfg.student_delay_ms,
        "pipelined_steps_per_s": rate_p,
        "serialized_steps_per_s": rate_s,
        "speedup": rate_p / rate_s,
        "teacher_occupation_pipelined": occ_piped,
        "teacher_occupation_serialized": occ_ser,
        "teacher_idle_pipelined": 1.0 - occ_piped,
        "teacher_idle_serialized": 1.0 - occ_ser,
        "bytes_hidden_per_step": bytes_hidden,
        "bytes_logits_equiv_per_step": bytes_logits,
        "logit_hidden_byte_ratio": f"{ratio.numerator}/{ratio.denominator}",
        "vocab_size": plan.vocab_size,
        "teacher_dim": plan.teacher_dim,
        "micro_batch": cfg.micro_batch,
    }

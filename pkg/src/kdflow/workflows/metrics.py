"""Per-step metrics records and the line-delimited log they are written to."""

from __future__ import annotations

import json
import math
from pathlib import Path

TIMING_FIELDS = ("t_teacher_ms", "t_student_ms", "t_transfer_ms")


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def step_record(config, step: int, epoch: int, metrics: dict, t_teacher_ms: float,
                rollout_version: int | None = None, **extra) -> dict:
    """Assemble one log record with a fixed key order.

    ``metrics`` is what the student engine reported for the step. Timings are
    zeroed when ``config.record_timings`` is off so logs compare byte for byte.
    """
    rec = {
        "step": step,
        "epoch": epoch,
        "loss": _finite(metrics.get("loss")),
        "grad_norm": _finite(metrics.get("grad_norm")),
    }
    if rollout_version is not None:
        rec["rollout_version"] = rollout_version
    timings = (t_teacher_ms, metrics.get("t_student_ms", 0.0), metrics.get("t_transfer_ms", 0.0))
    for name, value in zip(TIMING_FIELDS, timings):
        rec[name] = float(value) if config.record_timings else 0.0
    rec["bytes_hidden"] = int(metrics.get("bytes_hidden", 0))
    rec["bytes_logits_equiv"] = int(metrics.get("bytes_logits_equiv", 0))
    if metrics.get("error"):
        rec["error"] = metrics["error"]
    if "student_crc" in metrics:
        rec["student_crc"] = int(metrics["student_crc"])
    rec.update(extra)
    return rec


def skipped_record(config, step: int, epoch: int, rollout_version: int, **extra) -> dict:
    rec = step_record(config, step, epoch, {}, 0.0, rollout_version, skipped=True, **extra)
    return rec


class MetricsLog:
    """Append-only JSONL writer; the file is truncated on open."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "w")
        self.records: list[dict] = []

    def write(self, record: dict) -> None:
        self._f.write(json.dumps(record) + "\n")
        self._f.flush()
        self.records.append(record)

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str | Path) -> list[dict]:
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: line {lineno}: {e.msg}") from None
    return out

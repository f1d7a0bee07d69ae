"""Run configuration: a flat JSON object, one key per field."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from ..divergence import DivergenceKind
from ..model import ModelConfig
from ..tensor import DType


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


WORKFLOWS = ("off_policy", "on_policy")
PRECISIONS = {"f32": DType.F32, "bf16e": DType.BF16E}
ACTOR_MODES = ("thread", "process")


@dataclass
class KDRunConfig:
    teacher_checkpoint: str
    student_checkpoint: str
    dataset_path: str
    output_dir: str
    workflow: str = "off_policy"
    rollout_checkpoint: str = ""
    divergence: str = "fkl"
    temperature: float = 1.0
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    global_batch: int = 16
    grad_accum: int = 4
    max_len: int = 128
    total_steps: int = 50
    top_k: int = 0
    teacher_precision: str = "f32"
    sync_interval: int = 1
    seed: int = 0
    # on-policy generation
    max_new_tokens: int = 32
    rollout_temperature: float = 1.0
    eos_id: int = 0
    # runtime
    actor_mode: str = "thread"
    channel_capacity: int = 256 << 20
    actor_timeout_s: float = 120.0
    record_timings: bool = True
    # synthetic load and fault injection
    teacher_delay_ms: float = 0.0
    student_delay_ms: float = 0.0
    fault_teacher_after: int = 0
    fault_torn_sync_version: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.workflow not in WORKFLOWS:
            raise ConfigError("workflow", f"must be one of {WORKFLOWS}, got {self.workflow!r}")
        for name in ("teacher_checkpoint", "student_checkpoint", "dataset_path", "output_dir"):
            if not getattr(self, name):
                raise ConfigError(name, "is required")
        try:
            DivergenceKind.parse(self.divergence)
        except ValueError as e:
            raise ConfigError("divergence", str(e)) from None
        if self.teacher_precision not in PRECISIONS:
            raise ConfigError("teacher_precision", f"must be one of {list(PRECISIONS)}, got {self.teacher_precision!r}")
        if self.actor_mode not in ACTOR_MODES:
            raise ConfigError("actor_mode", f"must be one of {ACTOR_MODES}, got {self.actor_mode!r}")
        if not self.temperature > 0:
            raise ConfigError("temperature", f"must be positive, got {self.temperature}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate", f"must be >= 0, got {self.learning_rate}")
        if self.global_batch < 1 or self.grad_accum < 1:
            raise ConfigError("global_batch", "global_batch and grad_accum must be >= 1")
        if self.global_batch % self.grad_accum:
            raise ConfigError("grad_accum", f"global_batch {self.global_batch} is not divisible by {self.grad_accum}")
        if self.max_len < 2:
            raise ConfigError("max_len", f"must be >= 2, got {self.max_len}")
        if self.total_steps < 0:
            raise ConfigError("total_steps", f"must be >= 0, got {self.total_steps}")
        if self.top_k < 0:
            raise ConfigError("top_k", f"must be 0 (full logits) or positive, got {self.top_k}")
        if self.sync_interval < 1:
            raise ConfigError("sync_interval", f"must be >= 1, got {self.sync_interval}")
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens", f"must be >= 1, got {self.max_new_tokens}")
        if self.fault_teacher_after < 0 or self.fault_torn_sync_version < 0:
            raise ConfigError("fault_teacher_after", "fault knobs must be >= 0")
        if self.rollout_temperature < 0:
            raise ConfigError("rollout_temperature", "must be >= 0")

    @property
    def kind(self) -> DivergenceKind:
        return DivergenceKind.parse(self.divergence)

    @property
    def teacher_dtype(self) -> DType:
        return PRECISIONS[self.teacher_precision]

    @property
    def micro_batch(self) -> int:
        return self.global_batch // self.grad_accum

    @property
    def rollout_ckpt(self) -> str:
        return self.rollout_checkpoint or self.student_checkpoint

    def check_models(self, teacher: ModelConfig, student: ModelConfig) -> None:
        """Cross-check the run against the loaded model configs."""
        if teacher.vocab_size != student.vocab_size:
            raise ConfigError(
                "student_checkpoint", f"vocab {student.vocab_size} differs from teacher vocab {teacher.vocab_size}"
            )
        limit = min(teacher.max_seq_len, student.max_seq_len)
        if self.max_len > limit:
            raise ConfigError("max_len", f"{self.max_len} exceeds the models' max_seq_len {limit}")
        if self.top_k > teacher.vocab_size:
            raise ConfigError("top_k", f"{self.top_k} exceeds teacher vocab {teacher.vocab_size}")

    def replace(self, **changes) -> KDRunConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def config_from_dict(data: dict) -> KDRunConfig:
    known = {f.name: f for f in fields(KDRunConfig)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    for name in ("teacher_checkpoint", "student_checkpoint", "dataset_path", "output_dir"):
        if name not in data:
            raise ConfigError(name, "is required")
    kwargs = {}
    for name, value in data.items():
        typ = known[name].type
        try:
            if typ == "int" and not isinstance(value, bool):
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError
                value = int(value)
            elif typ == "float":
                value = float(value)
            elif typ == "bool":
                if not isinstance(value, bool):
                    raise ValueError
            elif typ == "str":
                if not isinstance(value, str):
                    raise ValueError
        except (TypeError, ValueError):
            raise ConfigError(name, f"expected {typ}, got {value!r}") from None
        kwargs[name] = value
    return KDRunConfig(**kwargs)


def load_config(path: str | Path) -> KDRunConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"{path}: invalid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path}: expected a JSON object")
    return config_from_dict(data)

"""Run configuration, datasets, the two training loops and the throughput bench."""

from .bench import bench_pipeline, run_serialized
from .config import ConfigError, KDRunConfig, config_from_dict, load_config
from .data import (
    BatchBuilder,
    DatasetError,
    GlobalBatch,
    KDSample,
    MicroBatch,
    collate,
    iter_dataset,
    load_dataset,
    write_dataset,
)
from .metrics import MetricsLog, read_metrics, skipped_record, step_record
from .runner import (
    CHECKPOINT_FILE,
    METRICS_FILE,
    RunPlan,
    RunResult,
    plan_run,
    run_off_policy,
    run_on_policy,
    run_workflow,
)

__all__ = [
    "CHECKPOINT_FILE",
    "METRICS_FILE",
    "BatchBuilder",
    "ConfigError",
    "DatasetError",
    "GlobalBatch",
    "KDRunConfig",
    "KDSample",
    "MetricsLog",
    "MicroBatch",
    "RunPlan",
    "RunResult",
    "bench_pipeline",
    "collate",
    "config_from_dict",
    "iter_dataset",
    "load_config",
    "load_dataset",
    "plan_run",
    "read_metrics",
    "run_off_policy",
    "run_on_policy",
    "run_serialized",
    "run_workflow",
    "skipped_record",
    "step_record",
    "write_dataset",
]

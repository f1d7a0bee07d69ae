"""Command-line entry point: ``kdflow {run,oracle,compare,bench,gen-fixtures}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from .actors import ActorError
from .actors.rollout import sample_seed
from .model import CheckpointError, ModelConfig, init_weights, sample, save_checkpoint
from .model import ConfigError as ModelConfigError
from .tensor import make_rng
from .transport import ChannelError
from .workflows import (
    ConfigError,
    KDRunConfig,
    KDSample,
    bench_pipeline,
    load_config,
    read_metrics,
    run_workflow,
    write_dataset,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

EPILOG = """\
exit codes:
  0  success (compare: every step within tolerance)
  1  runtime failure: an actor died, reported an error or timed out
     (compare: some step deviates by more than the tolerance)
  2  invalid configuration, dataset or checkpoint, named by field
     (compare: the two logs have different step counts)

files:
  config       flat JSON object, one key per run field (see README)
  dataset      JSON lines: {"prompt_ids": [int...], "response_ids": [int...]}
  metrics log  JSON lines: step, epoch, loss, grad_norm, rollout_version
               (on-policy only), t_teacher_ms, t_student_ms, t_transfer_ms,
               bytes_hidden, bytes_logits_equiv
  checkpoint   binary KDCK file written to <output_dir>/student_final.kdck

environment:
  KDFLOW_RUN_ID  fixes the run id used to name shared-memory channels
"""

TEACHER_SEED = 1
STUDENT_SEED = 2
TEACHER_CONFIG = ModelConfig(n_layers=2, d_model=64, n_heads=4, d_ff=256, vocab_size=512, max_seq_len=128)
STUDENT_CONFIG = ModelConfig(n_layers=2, d_model=32, n_heads=2, d_ff=128, vocab_size=512, max_seq_len=128)


def _load(args) -> KDRunConfig:
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "workflow", None):
        changes["workflow"] = args.workflow
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "output_dir", None):
        changes["output_dir"] = args.output_dir
    if getattr(args, "steps", None) is not None:
        changes["total_steps"] = args.steps
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    result = run_workflow(cfg, config_path=None)
    print(f"{len(result.records)} steps in {result.wall_s:.1f}s; metrics: {result.metrics_path}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracle import METRICS_FILE, oracle_run

    cfg = _load(args)
    records = oracle_run(cfg)
    print(f"{len(records)} steps; metrics: {Path(cfg.output_dir) / METRICS_FILE}")
    return EXIT_OK


def _loss(rec: dict) -> float | None:
    v = rec.get("loss")
    return None if v is None else float(v)


def cmd_compare(args) -> int:
    a, b = read_metrics(args.log_a), read_metrics(args.log_b)
    if len(a) != len(b):
        print(f"step count mismatch: {len(a)} vs {len(b)}", file=sys.stderr)
        return EXIT_USAGE
    rows = []
    for ra, rb in zip(a, b):
        la, lb = _loss(ra), _loss(rb)
        if la is None and lb is None:
            dev = 0.0
        elif la is None or lb is None:
            dev = math.inf
        else:
            dev = abs(la - lb)
        rows.append({"step": ra.get("step"), "loss_a": la, "loss_b": lb, "abs_dev": dev})
    devs = [r["abs_dev"] for r in rows]
    max_dev = max(devs, default=0.0)
    mean_dev = sum(devs) / len(devs) if devs else 0.0
    ok = max_dev <= args.tolerance
    if args.json:
        print(json.dumps({"steps": rows, "max_abs_dev": max_dev, "mean_abs_dev": mean_dev, "within_tolerance": ok}))
    else:
        print("step\tloss_a\tloss_b\tabs_dev")
        for r in rows:
            print(f"{r['step']}\t{r['loss_a']!r}\t{r['loss_b']!r}\t{r['abs_dev']!r}")
        print(f"max_abs_dev\t{max_dev!r}\nmean_abs_dev\t{mean_dev!r}\ntolerance\t{args.tolerance!r}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_bench(args) -> int:
    cfg = _load(args)
    report = bench_pipeline(cfg, args.teacher_delay_ms, args.student_delay_ms, args.steps)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def gen_fixtures(out_dir: str | Path, n_samples: int = 64, seed: int = 0, max_new: int = 48) -> dict:
    """Checkpoints, a teacher-sampled dataset and ready-to-run configs under ``out_dir``."""
    out = Path(out_dir).resolve()
    out.mkdir(parents=True, exist_ok=True)
    teacher = init_weights(TEACHER_CONFIG, TEACHER_SEED)
    student = init_weights(STUDENT_CONFIG, STUDENT_SEED)
    save_checkpoint(teacher, out / "teacher.kdck")
    save_checkpoint(student, out / "student.kdck")

    rng = make_rng(seed, 0x70726F6D7074)
    samples, provenance = [], []
    for i in range(n_samples):
        n = int(rng.integers(8, 17))
        prompt = [int(t) for t in rng.integers(1, TEACHER_CONFIG.vocab_size, size=n)]
        attempt = 0
        while True:
            s = sample_seed(seed, i, attempt)
            response = sample(teacher, prompt, max_new, 1.0, s)
            if response:
                break
            attempt += 1
        samples.append(KDSample(tuple(prompt), tuple(response)))
        provenance.append({"index": i, "rng_seed": s, "temperature": 1.0, "max_new": max_new})
    write_dataset(samples, out / "dataset.jsonl")

    meta = {
        "teacher_seed": TEACHER_SEED,
        "student_seed": STUDENT_SEED,
        "dataset_seed": seed,
        "teacher_config": dataclasses.asdict(TEACHER_CONFIG),
        "student_config": dataclasses.asdict(STUDENT_CONFIG),
        "samples": provenance,
    }
    (out / "fixtures.json").write_text(json.dumps(meta, indent=2) + "\n")
    base = dict(
        teacher_checkpoint=str(out / "teacher.kdck"),
        student_checkpoint=str(out / "student.kdck"),
        dataset_path=str(out / "dataset.jsonl"),
    )
    for workflow in ("off_policy", "on_policy"):
        KDRunConfig(output_dir=str(out / "runs" / workflow), workflow=workflow, **base).save(out / f"{workflow}.json")
    return meta


def cmd_gen_fixtures(args) -> int:
    gen_fixtures(args.out_dir, args.samples, args.seed, args.max_new)
    print(f"fixtures written to {Path(args.out_dir).resolve()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kdflow",
        description="Decoupled knowledge distillation: teacher, student and rollout actors over shared-memory channels.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log actor activity")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_, func):
        sp = sub.add_parser(name, help=help_, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("config", help="run configuration (JSON)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--output-dir", help="override the config output_dir")
        sp.set_defaults(func=func)
        return sp

    sp = with_config("run", "run a distillation workflow with actors", cmd_run)
    sp.add_argument("--workflow", choices=["off_policy", "on_policy"], help="override the config workflow")
    sp.add_argument("--steps", type=int, help="override total_steps")

    sp = with_config("oracle", "run the single-process reference implementation", cmd_oracle)
    sp.add_argument("--workflow", choices=["off_policy", "on_policy"], help="override the config workflow")
    sp.add_argument("--steps", type=int, help="override total_steps")

    sp = with_config("bench", "pipelined vs serialized throughput", cmd_bench)
    sp.add_argument("--teacher-delay-ms", type=float, default=100.0)
    sp.add_argument("--student-delay-ms", type=float, default=100.0)
    sp.add_argument("--steps", type=int, help="benchmark steps (default: total_steps)")

    sp = sub.add_parser("compare", help="per-step loss deviation between two metrics logs",
                        epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sp.add_argument("log_a")
    sp.add_argument("log_b")
    sp.add_argument("--tolerance", type=float, default=0.0, help="max allowed |loss_a - loss_b| (default 0)")
    sp.add_argument("--json", action="store_true", help="emit one JSON object instead of a table")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gen-fixtures", help="write checkpoints, a dataset and run configs",
                        epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    sp.add_argument("out_dir")
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-new", type=int, default=48)
    sp.set_defaults(func=cmd_gen_fixtures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ModelConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ActorError, ChannelError, OSError, RuntimeError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

from __future__ import annotations

import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from kdflow.model import ModelConfig, init_weights, save_checkpoint  # noqa: E402
from kdflow.tensor import make_rng  # noqa: E402
from kdflow.workflows import KDRunConfig, KDSample, load_config, write_dataset  # noqa: E402

settings.register_profile("ci", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

TINY_TEACHER = ModelConfig(n_layers=1, d_model=16, n_heads=2, d_ff=32, vocab_size=64, max_seq_len=32)
TINY_STUDENT = ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=16, vocab_size=64, max_seq_len=32)


def random_samples(n: int, vocab: int, seed: int, prompt=(4, 9), response=(4, 13)) -> list[KDSample]:
    rng = make_rng(seed, 7)
    out = []
    for _ in range(n):
        p = rng.integers(1, vocab, size=int(rng.integers(*prompt))).tolist()
        r = rng.integers(1, vocab, size=int(rng.integers(*response))).tolist()
        out.append(KDSample(tuple(p), tuple(r)))
    return out


@pytest.fixture(scope="session")
def desk(tmp_path_factory) -> Path:
    """Desk-scale fixtures exactly as ``kdflow gen-fixtures`` writes them."""
    from kdflow.cli import gen_fixtures

    out = tmp_path_factory.mktemp("desk")
    gen_fixtures(out, n_samples=64, seed=0)
    return out


@pytest.fixture(scope="session")
def tiny(tmp_path_factory) -> Path:
    """V=64 teacher/student pair with a random-token dataset (fast runs)."""
    out = tmp_path_factory.mktemp("tiny")
    save_checkpoint(init_weights(TINY_TEACHER, 11), out / "teacher.kdck")
    save_checkpoint(init_weights(TINY_STUDENT, 12), out / "student.kdck")
    write_dataset(random_samples(32, TINY_TEACHER.vocab_size, 3), out / "dataset.jsonl")
    return out


def tiny_config(tiny: Path, out: Path, **kw) -> KDRunConfig:
    base = dict(
        teacher_checkpoint=str(tiny / "teacher.kdck"),
        student_checkpoint=str(tiny / "student.kdck"),
        dataset_path=str(tiny / "dataset.jsonl"),
        output_dir=str(out),
        global_batch=8,
        grad_accum=2,
        max_len=32,
        total_steps=4,
        record_timings=False,
        channel_capacity=1 << 20,
        actor_timeout_s=30.0,
        max_new_tokens=8,
        learning_rate=1e-2,
    )
    base.update(kw)
    return KDRunConfig(**base)


def desk_config(desk: Path, out: Path, workflow: str = "off_policy", **kw) -> KDRunConfig:
    kw.setdefault("record_timings", False)
    kw.setdefault("channel_capacity", 8 << 20)
    return load_config(desk / f"{workflow}.json").replace(output_dir=str(out), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in rep.nodeid or rep.when != "call":
                continue
            measured = dict(rep.user_properties).get("measured", "")
            rows.append(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {rep.nodeid.split('::')[-1]}  {measured}")
    if rows:
        terminalreporter.write_sep("=", "acceptance criteria")
        for row in sorted(rows, key=lambda r: r.split()[1]):
            terminalreporter.write_line(row)

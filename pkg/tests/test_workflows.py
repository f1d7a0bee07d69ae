from __future__ import annotations

import numpy as np
import pytest

from kdflow.actors.protocol import weights_crc
from kdflow.divergence import distill_step_loss
from kdflow.model import forward_hidden, forward_logits, load_checkpoint, save_checkpoint
from kdflow.oracle import CHECKPOINT_FILE as ORACLE_CKPT, oracle_run
from kdflow.tensor import Tensor
from kdflow.workflows import KDSample, read_metrics, run_off_policy, run_on_policy, run_workflow, write_dataset
from kdflow.workflows.config import ConfigError
from kdflow.workflows.metrics import TIMING_FIELDS
from kdflow.workflows.runner import CHECKPOINT_FILE, plan_run
from conftest import tiny_config

FIXED_KEYS = ["step", "epoch", "loss", "grad_norm", "t_teacher_ms", "t_student_ms", "t_transfer_ms",
              "bytes_hidden", "bytes_logits_equiv"]


def untimed(records):
    return [{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in records]


@pytest.mark.parametrize("kw", [
    dict(),
    dict(divergence="rkl", grad_accum=4),
    dict(divergence="jsd", top_k=8, temperature=2.0),
    dict(divergence="tvd", teacher_precision="bf16e", grad_accum=1),
], ids=["fkl", "rkl-ga4", "jsd-topk", "tvd-bf16e"])
def test_pipeline_matches_oracle_bitwise(tiny, tmp_path, kw):
    cfg = tiny_config(tiny, tmp_path, total_steps=5, **kw)
    piped = run_workflow(cfg)
    ref = oracle_run(cfg)
    assert [r["loss"] for r in piped.records] == [r["loss"] for r in ref]
    assert untimed(piped.records) == untimed(ref)
    assert load_checkpoint(tmp_path / CHECKPOINT_FILE).bitwise_equal(load_checkpoint(tmp_path / ORACLE_CKPT))


def test_log_format_and_determinism(tiny, tmp_path):
    a = tiny_config(tiny, tmp_path / "a", total_steps=6)  # 48 samples over 32: wraps into epoch 1
    b = a.replace(output_dir=str(tmp_path / "b"))
    ra, rb = run_workflow(a), run_workflow(b)
    assert ra.metrics_path.read_bytes() == rb.metrics_path.read_bytes()
    assert (tmp_path / "a" / CHECKPOINT_FILE).read_bytes() == (tmp_path / "b" / CHECKPOINT_FILE).read_bytes()
    recs = read_metrics(ra.metrics_path)
    assert [list(r) for r in recs] == [FIXED_KEYS] * 6
    assert [r["step"] for r in recs] == list(range(6))
    assert [r["epoch"] for r in recs] == [0, 0, 0, 0, 1, 1]
    assert all(r[k] == 0.0 for r in recs for k in TIMING_FIELDS)
    assert all(r["bytes_hidden"] > 0 and r["bytes_logits_equiv"] == r["bytes_hidden"] * 64 // 16 for r in recs)


def test_timings_recorded_when_enabled(tiny, tmp_path):
    recs = run_workflow(tiny_config(tiny, tmp_path, total_steps=2, record_timings=True)).records
    assert all(r["t_teacher_ms"] > 0 and r["t_student_ms"] > 0 and r["t_transfer_ms"] >= 0 for r in recs)


def test_seed_changes_order(tiny, tmp_path):
    a = run_workflow(tiny_config(tiny, tmp_path / "a", total_steps=2, seed=0)).records
    b = run_workflow(tiny_config(tiny, tmp_path / "b", total_steps=2, seed=1)).records
    assert a[0]["loss"] != b[0]["loss"]


def test_masked_hidden_rows_do_not_matter(tiny, tmp_path):
    cfg = tiny_config(tiny, tmp_path)
    plan = plan_run(cfg)
    teacher = load_checkpoint(cfg.teacher_checkpoint)
    student = load_checkpoint(cfg.student_checkpoint)
    head = teacher.lm_head()
    mb = plan.builder.batch(0).micro[0]
    hidden = forward_hidden(teacher, mb.tokens).data
    assert (mb.loss_mask == 0).any()
    noisy = hidden.copy()
    noisy[mb.loss_mask == 0] = np.random.default_rng(0).standard_normal((int((mb.loss_mask == 0).sum()),
                                                                        hidden.shape[-1])) * 100
    s = forward_logits(student, mb.tokens)
    for kind in ("fkl", "rkl", "jsd", "tvd"):
        a = distill_step_loss(Tensor(hidden), head, s, kind, mb.loss_mask)
        b = distill_step_loss(Tensor(noisy), head, s, kind, mb.loss_mask)
        assert a.loss == b.loss
        assert np.array_equal(a.grad, b.grad)


def test_workflow_guards(tiny, tmp_path):
    with pytest.raises(ConfigError):
        run_on_policy(tiny_config(tiny, tmp_path))
    with pytest.raises(ConfigError):
        run_off_policy(tiny_config(tiny, tmp_path, workflow="on_policy"))


class TestOnPolicy:
    @pytest.mark.parametrize("interval", [1, 2])
    def test_provenance_replay(self, tiny, tmp_path, interval):
        cfg = tiny_config(tiny, tmp_path, workflow="on_policy", total_steps=5, sync_interval=interval)
        piped = run_workflow(cfg).records
        ref = oracle_run(cfg)
        assert untimed(piped) == untimed(ref)
        assert [r["rollout_version"] for r in piped] == [s // interval for s in range(5)]
        init_crc = weights_crc(load_checkpoint(cfg.student_checkpoint))
        for s, r in enumerate(piped):
            if s < interval:
                assert r["rollout_crc"] == init_crc
            else:
                # generated by exactly the weights the student held after the last sync point
                src = piped[(s // interval) * interval - 1]
                assert r["rollout_crc"] == src["student_crc"]

    def test_torn_sync_recovers(self, tiny, tmp_path):
        cfg = tiny_config(tiny, tmp_path, workflow="on_policy", total_steps=4, fault_torn_sync_version=2)
        piped = run_workflow(cfg).records
        assert untimed(piped) == untimed(oracle_run(cfg))
        assert piped[2]["rollout_crc"] == piped[1]["student_crc"]

    def test_process_mode_matches_oracle(self, tiny, tmp_path):
        cfg = tiny_config(tiny, tmp_path, workflow="on_policy", total_steps=3, actor_mode="process")
        assert untimed(run_workflow(cfg).records) == untimed(oracle_run(cfg))

    def test_all_empty_responses_are_skipped(self, tiny, tmp_path):
        student = load_checkpoint(tiny / "student.kdck")
        prompt = (3, 1, 4, 1, 5)
        eos = int(np.argmax(forward_logits(student, np.array([prompt])).data[0, -1]))
        write_dataset([KDSample(prompt, (7,))], tmp_path / "d.jsonl")
        cfg = tiny_config(tiny, tmp_path, workflow="on_policy", total_steps=3, global_batch=2, grad_accum=1,
                          dataset_path=str(tmp_path / "d.jsonl"), rollout_temperature=0.0, eos_id=eos)
        recs = run_workflow(cfg).records
        assert all(r["skipped"] and r["loss"] is None for r in recs)
        assert [r["rollout_version"] for r in recs] == [0, 1, 2]
        assert untimed(recs) == untimed(oracle_run(cfg))
        assert load_checkpoint(tmp_path / CHECKPOINT_FILE).bitwise_equal(student)


def test_responses_replay_from_logged_version(tiny, tmp_path, monkeypatch):
    """Regenerate every step's responses from the weights of its logged rollout version."""
    from kdflow.actors import Controller
    from kdflow.actors.rollout import generate_batch
    from kdflow.oracle import OracleState, oracle_step
    from kdflow.workflows.runner import clip_prompts, on_policy_batch

    seen = []
    original = Controller.generate

    def spy(self, step, expect_version, prompts):
        resp = original(self, step, expect_version, prompts)
        seen.append((step, resp.version, resp.sequences()))
        return resp

    monkeypatch.setattr(Controller, "generate", spy)
    cfg = tiny_config(tiny, tmp_path, workflow="on_policy", total_steps=4, sync_interval=2)
    records = run_workflow(cfg).records
    assert [r["rollout_version"] for r in records] == [v for _, v, _ in seen]

    plan = plan_run(cfg)
    state = OracleState.create(cfg)
    versions = {0: load_checkpoint(cfg.student_checkpoint)}
    for step, version, sequences in seen:
        epoch, prompts = plan.builder.prompts(step)
        prompts = clip_prompts(prompts, cfg.max_len)
        assert generate_batch(versions[version], prompts, step, cfg) == sequences
        state, _ = oracle_step(state, on_policy_batch(plan, step, epoch, prompts, sequences))
        if (step + 1) % cfg.sync_interval == 0:
            versions[(step + 1) // cfg.sync_interval] = state.engine.weights

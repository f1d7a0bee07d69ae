from __future__ import annotations

import json
import shutil
import subprocess
import sys

import pytest

from kdflow.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, gen_fixtures, main
from kdflow.model import load_checkpoint, sample
from kdflow.workflows import load_config, read_metrics
from kdflow.workflows.data import load_dataset
from conftest import tiny_config


def write_log(path, losses):
    path.write_text("".join(json.dumps({"step": i, "loss": v}) + "\n" for i, v in enumerate(losses)))
    return str(path)


@pytest.fixture(scope="module")
def small_fixtures(tmp_path_factory):
    out = tmp_path_factory.mktemp("fx")
    assert main(["gen-fixtures", str(out), "--samples", "4", "--seed", "5", "--max-new", "12"]) == EXIT_OK
    return out


class TestGenFixtures:
    def test_layout_and_validity(self, small_fixtures):
        for name in ("teacher.kdck", "student.kdck", "dataset.jsonl", "fixtures.json", "off_policy.json",
                     "on_policy.json"):
            assert (small_fixtures / name).is_file()
        samples = load_dataset(small_fixtures / "dataset.jsonl")
        assert len(samples) == 4
        assert all(8 <= len(s.prompt_ids) <= 16 and 1 <= len(s.response_ids) <= 12 for s in samples)
        assert all(0 < t < 512 for s in samples for t in s.prompt_ids + s.response_ids)
        assert load_config(small_fixtures / "on_policy.json").workflow == "on_policy"

    def test_byte_identical_regeneration(self, small_fixtures, tmp_path):
        gen_fixtures(tmp_path, n_samples=4, seed=5, max_new=12)
        for name in ("teacher.kdck", "student.kdck", "dataset.jsonl"):
            assert (tmp_path / name).read_bytes() == (small_fixtures / name).read_bytes()

    def test_responses_replay_from_logged_seeds(self, small_fixtures):
        meta = json.loads((small_fixtures / "fixtures.json").read_text())
        teacher = load_checkpoint(small_fixtures / "teacher.kdck")
        for s, prov in zip(load_dataset(small_fixtures / "dataset.jsonl"), meta["samples"]):
            got = sample(teacher, s.prompt_ids, prov["max_new"], prov["temperature"], prov["rng_seed"])
            assert tuple(got) == s.response_ids


class TestRun:
    def test_missing_field_exit_2(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"teacher_checkpoint": "t", "student_checkpoint": "s",
                                                     "output_dir": "o"}))
        assert main(["run", str(tmp_path / "c.json")]) == EXIT_USAGE
        assert "dataset_path" in capsys.readouterr().err

    def test_unreadable_checkpoint_exit_2(self, tiny, tmp_path, capsys):
        cfg = tiny_config(tiny, tmp_path, teacher_checkpoint=str(tmp_path / "nope.kdck"))
        cfg.save(tmp_path / "c.json")
        assert main(["run", str(tmp_path / "c.json")]) == EXIT_USAGE

    def test_bad_dataset_line_exit_2(self, tiny, tmp_path, capsys):
        (tmp_path / "d.jsonl").write_text('{"prompt_ids": [1], "response_ids": [2]}\n{"prompt_ids": [1]}\n')
        tiny_config(tiny, tmp_path, dataset_path=str(tmp_path / "d.jsonl")).save(tmp_path / "c.json")
        assert main(["run", str(tmp_path / "c.json")]) == EXIT_USAGE
        assert "line 2" in capsys.readouterr().err

    def test_actor_failure_exit_1(self, tiny, tmp_path):
        tiny_config(tiny, tmp_path, fault_teacher_after=1).save(tmp_path / "c.json")
        assert main(["run", str(tmp_path / "c.json")]) == EXIT_RUNTIME

    def test_seed_override(self, tiny, tmp_path):
        tiny_config(tiny, tmp_path, total_steps=2).save(tmp_path / "c.json")
        assert main(["run", str(tmp_path / "c.json"), "--output-dir", str(tmp_path / "a")]) == EXIT_OK
        assert main(["run", str(tmp_path / "c.json"), "--output-dir", str(tmp_path / "b"), "--seed", "7"]) == EXIT_OK
        a = read_metrics(tmp_path / "a" / "metrics.jsonl")
        b = read_metrics(tmp_path / "b" / "metrics.jsonl")
        assert len(a) == len(b) == 2 and a[0]["loss"] != b[0]["loss"]

    def test_oracle_and_compare(self, tiny, tmp_path, capsys):
        tiny_config(tiny, tmp_path, total_steps=3).save(tmp_path / "c.json")
        assert main(["run", str(tmp_path / "c.json")]) == EXIT_OK
        assert main(["oracle", str(tmp_path / "c.json")]) == EXIT_OK
        capsys.readouterr()
        rc = main(["compare", str(tmp_path / "metrics.jsonl"), str(tmp_path / "oracle_metrics.jsonl"), "--json"])
        report = json.loads(capsys.readouterr().out)
        assert rc == EXIT_OK and report["max_abs_dev"] == 0.0 and report["within_tolerance"]
        assert len(report["steps"]) == 3

    def test_top_k_deviation_fails_compare(self, tiny, tmp_path):
        tiny_config(tiny, tmp_path, total_steps=3).save(tmp_path / "c.json")
        assert main(["oracle", str(tmp_path / "c.json"), "--output-dir", str(tmp_path / "full")]) == EXIT_OK
        cfg = tiny_config(tiny, tmp_path / "topk", total_steps=3, top_k=4)
        cfg.save(tmp_path / "k.json")
        assert main(["run", str(tmp_path / "k.json")]) == EXIT_OK
        args = ["compare", str(tmp_path / "full" / "oracle_metrics.jsonl"), str(tmp_path / "topk" / "metrics.jsonl")]
        assert main(args) == EXIT_RUNTIME
        assert main(args + ["--tolerance", "1e9"]) == EXIT_OK

    def test_process_mode_via_module(self, tiny, tmp_path):
        tiny_config(tiny, tmp_path, total_steps=2, actor_mode="process").save(tmp_path / "c.json")
        proc = subprocess.run([sys.executable, "-m", "kdflow", "run", str(tmp_path / "c.json")],
                              capture_output=True, text=True, timeout=300)
        assert proc.returncode == 0, proc.stderr
        assert len(read_metrics(tmp_path / "metrics.jsonl")) == 2
        assert (tmp_path / "run_config.json").is_file()


class TestCompare:
    def test_table_and_tolerance(self, tmp_path, capsys):
        a = write_log(tmp_path / "a.jsonl", [1.0, 2.0, 3.0])
        b = write_log(tmp_path / "b.jsonl", [1.0, 2.5, 3.0])
        assert main(["compare", a, a]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("step\tloss_a\tloss_b\tabs_dev") and "max_abs_dev\t0.0" in out
        assert main(["compare", a, b]) == EXIT_RUNTIME
        assert main(["compare", a, b, "--tolerance", "0.5"]) == EXIT_OK

    def test_step_count_mismatch_exit_2(self, tmp_path):
        a = write_log(tmp_path / "a.jsonl", [1.0, 2.0])
        b = write_log(tmp_path / "b.jsonl", [1.0])
        assert main(["compare", a, b]) == EXIT_USAGE

    def test_null_losses(self, tmp_path):
        a = write_log(tmp_path / "a.jsonl", [None, 1.0])
        b = write_log(tmp_path / "b.jsonl", [None, 1.0])
        c = write_log(tmp_path / "c.jsonl", [0.5, 1.0])
        assert main(["compare", a, b]) == EXIT_OK
        assert main(["compare", a, c, "--tolerance", "10"]) == EXIT_RUNTIME


class TestHelp:
    @pytest.mark.parametrize("argv", [["--help"], ["run", "--help"], ["compare", "--help"]])
    def test_help_documents_exit_codes(self, argv, capsys):
        with pytest.raises(SystemExit) as ei:
            main(argv)
        assert ei.value.code == 0
        out = capsys.readouterr().out
        for line in ("exit codes:", "  0  success", "  1  runtime failure", "  2  invalid configuration",
                     "KDFLOW_RUN_ID", "metrics log"):
            assert line in out

    def test_commands_listed(self, capsys):
        with pytest.raises(SystemExit):
            main(["--help"])
        out = capsys.readouterr().out
        for cmd in ("run", "oracle", "compare", "bench", "gen-fixtures"):
            assert cmd in out

    def test_console_script_installed(self):
        exe = shutil.which("kdflow")
        if exe is None:
            pytest.skip("console script not on PATH")
        assert subprocess.run([exe, "--help"], capture_output=True, timeout=60).returncode == 0

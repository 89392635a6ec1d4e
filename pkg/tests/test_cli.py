"""CLI-level tests: exit codes, multi-run reports, design subcommand."""

import json

import pytest

from benchforge.cli import main
from conftest import WORKER_CMD

SMALL_SUITE = f"""
suite: cli-small
defaults: {{obs_min: 5, obs_max: 10, timeout_s: 60}}
benchmarks:
  - name: fast
    weight: 1
    run_cmd: "{WORKER_CMD} --obs-min 5 --obs-max 10 --rate 100 --seed {{rank}}"
  - name: slow
    weight: 1
    run_cmd: "{WORKER_CMD} --obs-min 5 --obs-max 10 --rate 40 --seed {{rank}}"
"""


@pytest.fixture
def suite_path(tmp_path):
    path = tmp_path / "suite.yaml"
    path.write_text(SMALL_SUITE)
    return path


def run_once(suite_path, base, system):
    rc = main(
        [
            "run",
            "--config",
            str(suite_path),
            "--base-dir",
            str(base),
            "--devices",
            "d0,d1",
            "--system",
            system,
            "--no-setup-check",
        ]
    )
    assert rc == 0
    (run_dir,) = list((base / "runs").iterdir())
    return run_dir


class TestReportCLI:
    def test_two_system_report_with_baseline(self, suite_path, tmp_path, capsys):
        dir_a = run_once(suite_path, tmp_path / "a", "boxA")
        dir_b = run_once(suite_path, tmp_path / "b", "boxB")
        out = tmp_path / "report.json"
        rc = main(
            [
                "report",
                "--runs",
                f"{dir_a},{dir_b}",
                "--baseline",
                "boxA",
                "--format",
                "json",
                "-o",
                str(out),
            ]
        )
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["systems"] == ["boxA", "boxB"]
        fast = next(r for r in payload["rows"] if r["bench"] == "fast")
        # Same deterministic workload on both systems: ratio 1.
        assert fast["results"]["boxB"]["ratio"] == pytest.approx(1.0, rel=1e-9)

    def test_mixed_suite_hashes_rejected(self, suite_path, tmp_path, capsys):
        dir_a = run_once(suite_path, tmp_path / "a", "boxA")
        other = tmp_path / "other.yaml"
        other.write_text(SMALL_SUITE.replace("rate 40", "rate 41"))
        dir_b = run_once(other, tmp_path / "b", "boxB")
        rc = main(["report", "--runs", f"{dir_a},{dir_b}", "--format", "text"])
        assert rc == 4
        assert "different suite" in capsys.readouterr().err

    def test_unknown_baseline_rejected(self, suite_path, tmp_path, capsys):
        dir_a = run_once(suite_path, tmp_path / "a", "boxA")
        rc = main(["report", "--runs", str(dir_a), "--baseline", "nope"])
        assert rc == 4

    def test_not_a_run_dir(self, tmp_path, capsys):
        rc = main(["report", "--runs", str(tmp_path)])
        assert rc == 4
        assert "meta.json" in capsys.readouterr().err

    def test_text_report_to_stdout(self, suite_path, tmp_path, capsys):
        run_dir = run_once(suite_path, tmp_path / "a", "boxA")
        rc = main(["report", "--runs", str(run_dir)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "Global Score" in text
        assert "perf:boxA" in text


class TestSelectAndErrors:
    def test_zero_match_selector_is_config_error(self, suite_path, tmp_path, capsys):
        rc = main(
            [
                "run",
                "--config",
                str(suite_path),
                "--base-dir",
                str(tmp_path / "w"),
                "--select",
                "name=missing",
            ]
        )
        assert rc == 4
        assert "matches no enabled benchmark" in capsys.readouterr().err

    def test_selected_run_only_executes_matches(self, suite_path, tmp_path, capsys):
        rc = main(
            [
                "run",
                "--config",
                str(suite_path),
                "--base-dir",
                str(tmp_path / "w"),
                "--devices",
                "d0",
                "--select",
                "fast",
                "--no-setup-check",
            ]
        )
        assert rc == 0
        (run_dir,) = list((tmp_path / "w" / "runs").iterdir())
        assert (run_dir / "fast").exists()
        assert not (run_dir / "slow").exists()

    def test_broken_yaml_is_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("suite: [oops\n")
        rc = main(["install", "--config", str(bad), "--base-dir", str(tmp_path)])
        assert rc == 4

    def test_failing_benchmark_exits_three(self, tmp_path):
        suite = tmp_path / "s.yaml"
        suite.write_text(
            "suite: s\nbenchmarks:\n"
            f"  - name: dies\n    run_cmd: \"{WORKER_CMD} --kind crashing --crash-after 1 "
            "--obs-min 5 --obs-max 10 --seed 0\"\n"
        )
        rc = main(
            [
                "run",
                "--config",
                str(suite),
                "--base-dir",
                str(tmp_path / "w"),
                "--devices",
                "d0",
                "--no-setup-check",
            ]
        )
        assert rc == 3


class TestDesignCLI:
    def test_coverage_json(self, tmp_path, capsys):
        rc = main(["design", "--config", "configs/reference-suite.yaml", "--format", "json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["total_weight"] == 29.0
        assert sum(payload["proportions"]["model_sizes"].values()) == pytest.approx(1.0)

    def test_mlcm_from_csv(self, tmp_path, capsys):
        csv_path = tmp_path / "samples.csv"
        csv_path.write_text(
            "sample_id,true_labels,predicted_labels\n"
            "1,A,A\n"
            "2,A,\n"
            "3,,B\n"
            "4,A;B,B\n"
        )
        rc = main(["design", "--mlcm", str(csv_path), "--classes", "A,B", "--format", "json"])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        # diag A=1 (s1), (A,NPL)=2 (s2, s4), (NTL,B)=1 (s3), diag B=1 (s4)
        assert payload["counts"][0][0] == 1
        assert payload["counts"][0][2] == 2
        assert payload["counts"][2][1] == 1
        assert payload["counts"][1][1] == 1

    def test_design_without_inputs_is_config_error(self, capsys):
        assert main(["design"]) == 4

import json
import subprocess
import sys

import pytest

from bstepdca.cli import EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK, main
from bstepdca.problem import save_problem
from bstepdca.transcription import trajectory_from_csv
from helpers import tiny_scalar_instance


def test_train_run_writes_outputs(tmp_path):
    code = main(["--train", "step0", "--grid", "60", "--out", str(tmp_path), "--verify-criticality"])
    assert code == EXIT_OK
    for suffix in ("iterations.csv", "trajectory.csv", "summary.json", "timing.json", "criticality.json"):
        assert (tmp_path / f"step0_{suffix}").exists()
    summary = json.loads((tmp_path / "step0_summary.json").read_text())
    assert summary["termination"] == "converged"
    assert "wall_time" not in json.dumps(summary)
    t, traj = trajectory_from_csv((tmp_path / "step0_trajectory.csv").read_text())
    assert traj.N == 60 and t[-1] == pytest.approx(48.0)
    rows = (tmp_path / "step0_iterations.csv").read_text().strip().split("\n")
    assert len(rows) == summary["iterations"] + 1
    crit = json.loads((tmp_path / "step0_criticality.json").read_text())
    assert crit["generalized_critical"]
    assert "step0" in (tmp_path / "table.txt").read_text()


def test_repeated_runs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["--train", "bstep_l1", "--grid", "40", "--out", str(d)]) in (EXIT_OK, EXIT_NOT_CONVERGED)
    for name in ("bstep_l1_iterations.csv", "bstep_l1_trajectory.csv", "bstep_l1_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_problem_file_run(tmp_path):
    spec, base, _, _ = tiny_scalar_instance()
    path = tmp_path / "tiny.json"
    save_problem(spec, base, path)
    code = main(["--problem", str(path), "--grid", "4", "--out", str(tmp_path / "out"), "--max-iters", "30"])
    assert code in (EXIT_OK, EXIT_NOT_CONVERGED)
    assert (tmp_path / "out" / "tiny_summary.json").exists()


def test_iteration_cap_gives_not_converged_exit(tmp_path):
    assert main(["--train", "step0", "--grid", "40", "--max-iters", "1", "--out", str(tmp_path)]) == EXIT_NOT_CONVERGED


def test_strategy_flags(tmp_path):
    seq = tmp_path / "nu.txt"
    seq.write_text("0.5, 0.25 0.125\n")
    for nu in ("s1:" + str(seq), "s2:0.5", "s3:0.1"):
        code = main(["--train", "step_l1", "--grid", "30", "--nu", nu, "--trial-step", "prev", "--max-iters", "2", "--out", str(tmp_path)])
        assert code in (EXIT_OK, EXIT_NOT_CONVERGED)


@pytest.mark.parametrize(
    "argv",
    [
        ["--train", "nope"],
        ["--train", "step0", "--grid", "1"],
        ["--train", "step0", "--nu", "s9:1"],
        ["--train", "step0", "--trial-step", "adaptive:x"],
        ["--train", "step0", "--eta1", "2"],
        ["--problem", "/nonexistent.json"],
        [],
    ],
)
def test_usage_errors(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == EXIT_ERROR


def test_warm_start_requires_train(tmp_path):
    spec, base, _, _ = tiny_scalar_instance()
    path = tmp_path / "tiny.json"
    save_problem(spec, base, path)
    assert main(["--problem", str(path), "--warm-start", "--out", str(tmp_path)]) == EXIT_ERROR


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "bstepdca", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "--verify-criticality" in out.stdout

"""The command-line surface: validate, bench, report, apply-demo, loop."""
from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

from kbench.cli import cli
from kbench.dataset import Dataset
from kbench.trace import (
    SolutionRecord,
    SourceFile,
    parse_trace,
    serialize_trace,
)

SAMPLE = Path(__file__).parent / "data" / "sample"

GEMM_OK = (
    "import numpy as np\n"
    "def run(A, B):\n"
    "    return {'C': A.astype(np.float32) @ B.astype(np.float32).T}\n"
)
GEMM_OFFSET = (
    "import numpy as np\n"
    "def run(A, B):\n"
    "    return {'C': A.astype(np.float32) @ B.astype(np.float32).T + 10}\n"
)


def gemm_definition_name() -> str:
    return parse_trace((SAMPLE / "gemm_n128_k2048.json").read_text()).name


def write_solution(root: Path, name: str, source: str, definition: str) -> None:
    record = SolutionRecord(
        name=name, definition=definition, author="cli-test", language="python",
        entry_point="main.py::run",
        sources=(SourceFile("main.py", source),),
    )
    (root / f"{name}.json").write_text(serialize_trace(record), "utf-8")


def second_workload(root: Path) -> None:
    doc = json.loads((SAMPLE / "gemm_workload.json").read_text())
    doc["workload"]["uuid"] = "11111111-2222-4333-8444-555555555555"
    doc["workload"]["axes"]["M"] = 3
    (root / "gemm_workload_b.json").write_text(json.dumps(doc), "utf-8")


def gemm_dataset(root: Path, solutions=(("ok", GEMM_OK), ("offset", GEMM_OFFSET)),
                 workloads: int = 1) -> str:
    """Dataset dir with the sample gemm definition, 1-2 workloads, solutions."""
    root.mkdir(parents=True, exist_ok=True)
    shutil.copy(SAMPLE / "gemm_n128_k2048.json", root / "gemm_def.json")
    shutil.copy(SAMPLE / "gemm_workload.json", root / "gemm_workload.json")
    if workloads > 1:
        second_workload(root)
    name = gemm_definition_name()
    for sol_name, source in solutions:
        write_solution(root, sol_name, source, name)
    return name


def run_cli(*args, env=None):
    return CliRunner().invoke(cli, [str(a) for a in args], env=env)


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def test_validate_clean_sample_documents(tmp_path):
    root = tmp_path / "ds"
    root.mkdir()
    for file in SAMPLE.glob("*.json"):
        shutil.copy(file, root / file.name)
    result = run_cli("validate", "--dataset", root)
    assert result.exit_code == 0, result.output
    assert "8 document(s), 0 violation(s)" in result.output


def test_validate_empty_directory_succeeds(tmp_path):
    result = run_cli("validate", "--dataset", tmp_path)
    assert result.exit_code == 0
    assert "0 document(s), 0 violation(s)" in result.output


def test_validate_lists_exactly_the_corrupted_file(tmp_path):
    gemm_dataset(tmp_path / "ds")
    (tmp_path / "ds" / "corrupt.json").write_text("{not json", "utf-8")
    result = run_cli("validate", "--dataset", tmp_path / "ds")
    assert result.exit_code == 1
    report_lines = [l for l in result.output.splitlines() if l.startswith("corrupt.json")]
    assert len(report_lines) == 1
    assert "1 violation(s)" in result.output


def test_validate_missing_directory_is_operational_error(tmp_path):
    result = run_cli("validate", "--dataset", tmp_path / "nope")
    assert result.exit_code == 2
    assert "error:" in result.stderr


def test_help_lists_all_commands():
    result = run_cli("--help")
    assert result.exit_code == 0
    for command in ("validate", "bench", "report", "apply-demo", "loop"):
        assert command in result.output


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def test_bench_writes_one_record_per_pair_and_flags_failures(tmp_path):
    root = tmp_path / "ds"
    gemm_dataset(root, workloads=2)   # 1 definition x 2 workloads x 2 solutions
    result = run_cli("bench", "--dataset", root, "--workers", 1,
                     "--warmup", 0, "--runs", 2)
    assert result.exit_code == 1, result.output          # the offset solution fails
    assert "4 evaluation(s) written, 2 failed" in result.output

    ds = Dataset.load(root)
    assert ds.violations == []
    evals = ds.evaluations()
    assert len(evals) == 4
    by_solution = {}
    for t in evals:
        by_solution.setdefault(t.solution_name, []).append(t.evaluation.status.value)
    assert by_solution["ok"] == ["PASSED", "PASSED"]
    assert by_solution["offset"] == ["FAILED_CORRECTNESS", "FAILED_CORRECTNESS"]

    # idempotent re-run appends fresh records instead of clobbering
    again = run_cli("bench", "--dataset", root, "--workers", 1,
                    "--warmup", 0, "--runs", 2, "--filter-solution", "ok")
    assert again.exit_code == 0, again.output
    assert "2 evaluation(s) written, 0 failed" in again.output
    assert len(Dataset.load(root).evaluations()) == 6


def test_bench_filter_definition_miss_runs_nothing(tmp_path):
    root = tmp_path / "ds"
    gemm_dataset(root)
    result = run_cli("bench", "--dataset", root, "--filter-definition", "nonesuch",
                     "--warmup", 0, "--runs", 1)
    assert result.exit_code == 0
    assert "0 evaluation(s) written" in result.output


def test_bench_rejects_dataset_with_violations(tmp_path):
    root = tmp_path / "ds"
    gemm_dataset(root)
    (root / "corrupt.json").write_text("{not json", "utf-8")
    result = run_cli("bench", "--dataset", root, "--warmup", 0, "--runs", 1)
    assert result.exit_code == 2
    assert "schema violations" in result.stderr


# ---------------------------------------------------------------------------
# report / apply-demo / loop  (chained over one benched dataset)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def benched_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("benched") / "ds"
    gemm_dataset(root)
    result = run_cli("bench", "--dataset", root, "--workers", 1,
                     "--warmup", 0, "--runs", 2)
    assert result.exit_code == 1, result.output   # offset solution fails by design
    return root


def test_report_emits_leaderboard_and_curves(tmp_path, benched_dataset):
    out = tmp_path / "report"
    result = run_cli("report", "--dataset", benched_dataset, "--out", out)
    assert result.exit_code == 0, result.output
    csv_lines = (out / "leaderboard.csv").read_text().splitlines()
    assert csv_lines[0].startswith("author,definition,")
    assert len(csv_lines) == 2                      # one (author, definition) row
    assert (out / "leaderboard.json").exists()
    curves = list((out / "curves").glob("*.csv"))
    assert len(curves) == 1
    first = curves[0].read_text().splitlines()[0]
    p, value = first.split(",")
    assert float(p) == 0.0 and 0.0 <= float(value) <= 1.0
    assert "cli-test" in result.output


def test_report_without_evaluations_is_an_error(tmp_path):
    root = tmp_path / "ds"
    gemm_dataset(root)
    result = run_cli("report", "--dataset", root)
    assert result.exit_code == 2
    assert "error:" in result.stderr


def test_apply_demo_disabled_flag_keeps_zero_probes(benched_dataset):
    result = run_cli("apply-demo", "--dataset", benched_dataset,
                     "--definition", gemm_definition_name(), "--calls", 3,
                     env={"FIB_ENABLE_APPLY": ""})
    assert result.exit_code == 0, result.output
    assert "routing enabled: False" in result.output
    assert "'probes': 0" in result.output
    assert "outputs match reference: True" in result.output
    assert "dispatch overhead" in result.output


def test_apply_demo_routes_to_the_indexed_plugin(benched_dataset):
    result = run_cli("apply-demo", "--dataset", benched_dataset,
                     "--definition", gemm_definition_name(), "--calls", 3,
                     env={"FIB_ENABLE_APPLY": "1"})
    assert result.exit_code == 0, result.output
    assert "routing enabled: True" in result.output
    assert "index target: ok" in result.output      # passing solution won the key
    assert "outputs match reference: True" in result.output
    assert "'fallback_calls': 0" in result.output


def test_apply_demo_unknown_definition_is_operational(benched_dataset):
    result = run_cli("apply-demo", "--dataset", benched_dataset,
                     "--definition", "nonesuch")
    assert result.exit_code == 2
    assert "unknown definition" in result.stderr


def test_apply_demo_rejects_malformed_axis_override(benched_dataset):
    result = run_cli("apply-demo", "--dataset", benched_dataset,
                     "--definition", gemm_definition_name(), "--axis", "M:6")
    assert result.exit_code == 2


def test_loop_writes_winner_and_traces(tmp_path):
    root = tmp_path / "ds"
    name = gemm_dataset(root, solutions=())          # definition + workload only
    candidates = tmp_path / "candidates"
    candidates.mkdir()
    write_solution(candidates, "a_broken", GEMM_OFFSET, name)
    write_solution(candidates, "b_works", GEMM_OK, name)

    result = run_cli("loop", "--dataset", root, "--definition", name,
                     "--provider", candidates, "--iterations", 3,
                     "--warmup", 0, "--runs", 2)
    assert result.exit_code == 0, result.output
    assert "winner: b_works" in result.output
    assert (root / "b_works.json").exists()
    ds = Dataset.load(root)
    assert ds.violations == []
    assert "b_works" in ds.solutions
    evals = [t for t in ds.evaluations() if t.solution_name == "b_works"]
    assert len(evals) == 1                            # one workload in this dataset
    assert evals[0].evaluation.status.value == "PASSED"


def test_loop_all_failing_provider_exits_one(tmp_path):
    root = tmp_path / "ds"
    name = gemm_dataset(root, solutions=())
    candidates = tmp_path / "candidates"
    candidates.mkdir()
    write_solution(candidates, "a_broken", GEMM_OFFSET, name)

    result = run_cli("loop", "--dataset", root, "--definition", name,
                     "--provider", candidates, "--iterations", 2,
                     "--warmup", 0, "--runs", 2)
    assert result.exit_code == 1
    assert "no passing solution" in result.stderr

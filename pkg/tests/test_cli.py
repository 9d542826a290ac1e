import csv
import json
import subprocess
import sys

import pytest

from mixsolve import cli


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def data(tmp_path, capsys):
    path = tmp_path / "sim.tsv"
    code, out, _ = run(capsys, "simulate", "--n", 2000, "--seed", 1, "--out", path)
    assert code == 0
    assert out.strip() == f"2000 rows written to {path}"
    return path


def test_simulate_writes_header_and_rows(data):
    lines = data.read_text().splitlines()
    assert lines[0] == "b\tSE" and len(lines) == 2001


def test_simulate_to_stdout_matches_file(data, capsys):
    code, out, _ = run(capsys, "simulate", "--n", 2000, "--seed", 1)
    assert code == 0 and out == data.read_text()


def test_simulate_rejects_zero_rows(capsys):
    code, _, err = run(capsys, "simulate", "--n", 0)
    assert code == 2 and "--n" in err


def test_solve_sqp_report(data, tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    code, out, _ = run(capsys, "solve", "--data", data, "--m", 20, "--trace-out", trace)
    assert code == 0
    rep = json.loads(out)
    assert rep["schema"] == "mixsolve/1"
    assert rep["status"] == "converged" and rep["dual_residual"] <= 1e-8
    assert (rep["n"], rep["m"]) == (2000, 20)
    assert rep["factor_rank"] > 0
    assert rep["objective_times_n"] == pytest.approx(rep["objective"] * 2000)
    assert sum(rep["timings"].values()) <= rep["total_time"] * 1.05
    assert len(rep["x"]) == 20 and sum(rep["x"]) == pytest.approx(1.0, abs=1e-12)
    rows = list(csv.DictReader(trace.open()))
    assert list(rows[0]) == list(cli.TRACE_COLUMNS)
    assert len(rows) == rep["iterations"]


def test_solve_em_iteration_cap(data, tmp_path, capsys):
    trace = tmp_path / "t.csv"
    code, out, _ = run(capsys, "solve", "--data", data, "--m", 20, "--solver", "em",
                       "--max-iter", 5, "--trace-out", trace)
    assert code == 0
    assert json.loads(out)["status"] == "max_iter"
    assert len(trace.read_text().splitlines()) == 6


def test_solve_missing_column(tmp_path, capsys):
    path = tmp_path / "bad.tsv"
    path.write_text("b\tse\n1\t1\n")
    code, _, err = run(capsys, "solve", "--data", path, "--m", 5)
    assert code == 3 and "'SE'" in err


def test_solve_reports_parse_line(tmp_path, capsys):
    path = tmp_path / "bad.tsv"
    path.write_text("b\tSE\n1\t1\n1\toops\n")
    code, _, err = run(capsys, "solve", "--data", path, "--m", 5)
    assert code == 3 and "bad.tsv:3" in err


def test_bad_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["solve", "--solver", "newton"])
    assert info.value.code == 2


def test_build_then_solve_binary(data, tmp_path, capsys):
    mat = tmp_path / "L.bin"
    code, out, _ = run(capsys, "build", "--data", data, "--m", 12, "--out", mat)
    assert code == 0 and json.loads(out)["m"] == 12
    code, out, _ = run(capsys, "solve", "--data", mat, "--solver", "sqp-dense")
    rep = json.loads(out)
    assert rep["status"] == "converged" and rep["factor_rank"] == 0


def test_reproducible_reports(data, capsys):
    args = ("solve", "--data", data, "--m", 20, "--no-timing")
    assert run(capsys, *args)[1] == run(capsys, *args)[1]


def test_race_table(capsys):
    code, out, _ = run(capsys, "race", "--n", 500, "--m", 10, "--solvers", "sqp", "em",
                       "--max-iter", 50, "--no-timing")
    assert code == 0
    rows = list(csv.DictReader(out.splitlines()))
    assert {r["solver"] for r in rows} == {"sqp", "em"}
    assert min(float(r["gap_times_n"]) for r in rows) == 0.0


def test_bench_cardinality_and_determinism(tmp_path, capsys):
    args = ("bench", "--n", 300, 600, "--m", 8, "--solvers", "sqp", "em", "--repeats", 2,
            "--no-timing")
    code, out, _ = run(capsys, *args)
    assert code == 0
    assert len(out.splitlines()) == 1 + 8
    assert run(capsys, *args)[1] == out


def test_bench_memory_cap_skips_cells(capsys, caplog):
    code, out, _ = run(capsys, "bench", "--n", 1000, "--m", 10, "--mem-cap-mb", 0.01)
    assert code == 0
    assert len(out.splitlines()) == 1
    assert "skipping n=1000 m=10" in caplog.text


def test_bench_rank_sweep(capsys):
    code, out, _ = run(capsys, "bench", "--n", 1000, "--m", 20, "--rank-sweep", 4, 6,
                       "--no-timing")
    assert code == 0
    rows = list(csv.DictReader(out.splitlines()))
    assert [r["rank"] for r in rows][:3] == ["4", "5", "6"]
    assert "adaptive" in [r["rank"] for r in rows]
    assert all(float(r["l1_gap"]) >= 0 for r in rows)


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "mixsolve", "simulate", "--n", "3"],
                         capture_output=True, text=True, check=True).stdout
    assert out.splitlines()[0] == "b\tSE" and len(out.splitlines()) == 4

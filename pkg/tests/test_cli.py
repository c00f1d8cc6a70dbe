import json
import subprocess
import sys

import numpy as np

from cyclic_sem.cli import main, parse_lambda
from cyclic_sem.io import read_matrix


def run(args, capsys):
    code = main([str(a) for a in args])
    return code, capsys.readouterr().out


def test_parse_lambda():
    assert parse_lambda("0.5") == [0.5]
    g = parse_lambda("1e-3:1:4")
    assert len(g) == 4 and g[0] == 1.0 and abs(g[-1] - 1e-3) < 1e-15


def test_design_command(tmp_path, capsys):
    code, out = run(["design", "--p", 8, "--kind", "bounded", "--k", 4, "--out", tmp_path / "s.json"], capsys)
    assert code == 0 and "completely_separating = true" in out
    desc = json.loads((tmp_path / "s.json").read_text())
    assert max(len(J) for J in desc["intervened"]) <= 4


def test_simulate_and_estimate(tmp_path, capsys):
    data = tmp_path / "data"
    assert run(["simulate", "--p", 5, "--n", 20000, "--seed", 2, "--out", data], capsys)[0] == 0
    truth = data / "truth.csv"
    code, out = run(["estimate", "llc", "--data", data, "--lambda", "1e-4:1:8", "--relative", "--truth", truth,
                     "--out", tmp_path / "llc.csv", "--report", tmp_path / "rows.csv"], capsys)
    assert code == 0 and "sq_frob_error" in out
    assert read_matrix(tmp_path / "llc.csv").shape == (5, 5)
    assert (tmp_path / "rows.csv").read_text().startswith("row,iterations,kkt_residual")
    code, out = run(["estimate", "mle", "--data", data, "--lambda-init", "1e-3:0.3:4", "--lambda-loc", "1e-3:0.3:4",
                     "--truth", truth, "--out", tmp_path / "loc.csv", "--report", tmp_path / "trace.csv",
                     "--fast-likelihood"], capsys)
    assert code == 0
    head = (tmp_path / "trace.csv").read_text().splitlines()
    assert head[0] == "iter,objective,primal_residual,dual_residual,rho,wall_time_ms"
    assert "np.float64" not in "".join(head)


def test_mle_single_values_without_truth(tmp_path, capsys):
    data = tmp_path / "data"
    run(["simulate", "--p", 4, "--n", 4000, "--out", data, "--mode", "covariances"], capsys)
    code, out = run(["estimate", "mle", "--data", data, "--lambda-init", 0.01, "--lambda-loc", 0.01,
                     "--radius", 0.5, "--out", tmp_path / "b.csv"], capsys)
    assert code == 0
    B0 = read_matrix(tmp_path / "b.csv")
    assert np.all(np.diag(B0) == 0)


def test_identifiability_command(tmp_path, capsys):
    code, out = run(["diagnose", "identifiability", "--p", 4], capsys)
    assert "m_bound = 10" in out and "verdict = non_identifiable" in out
    run(["design", "--p", 4, "--kind", "single", "--out", tmp_path / "s.json"], capsys)
    code, out = run(["diagnose", "identifiability", "--system", tmp_path / "s.json", "--sv-out", tmp_path / "sv.csv"],
                    capsys)
    assert "numeric_rank = 12" in out and "verdict = identifiable_locally" in out
    assert len(np.loadtxt(tmp_path / "sv.csv")) == 12


def test_bench_command(tmp_path, capsys):
    cfg = tmp_path / "b.ini"
    cfg.write_text("p = 4\nvalues = 2000\nrepetitions = 1\nestimators = llc\nllc_grid = 1e-3, 1, 5\n")
    code, out = run(["bench", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 0 and "llc" in out
    assert (tmp_path / "o" / "results.csv").exists()


def test_bad_input_exit_code(tmp_path, capsys):
    (tmp_path / "b.ini").write_text("nonsense = 3\n")
    assert main(["bench", "--config", str(tmp_path / "b.ini")]) == 2


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "cyclic_sem.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "estimate" in out.stdout

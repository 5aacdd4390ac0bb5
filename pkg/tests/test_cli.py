import json
import subprocess
import sys

import numpy as np
import pytest

from extgvar.cli import run
from extgvar.design import DesignReport
from extgvar.estimate import EstimateReport
from extgvar.io import write_matrix_csv
from extgvar.maxdiv import measure_from_dict
from extgvar.simulate import MonteCarloReport


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def diag123(tmp_path):
    p = tmp_path / "diag123.csv"
    write_matrix_csv(p, np.diag([1.0, 2.0, 3.0]))
    return p


def test_psi(capsys, diag123):
    code, out, _ = call(capsys, "psi", "--cov", diag123, "--k", 2)
    assert code == 0
    assert json.loads(out)["psi"] == pytest.approx(16.5, rel=1e-14)


def test_estimate_with_oracle(capsys, tmp_path):
    p = tmp_path / "s.csv"
    x = np.random.default_rng(0).standard_normal((8, 3))
    write_matrix_csv(p, x)
    code, out, _ = call(capsys, "estimate", "--sample", p, "--k", 2, "--oracle")
    assert code == 0
    data = json.loads(out)
    assert data["oracleRelErr"] < 1e-10
    rep = EstimateReport.from_dict(data)
    assert rep.n == 8 and rep.k == 2


def test_estimate_insufficient_sample(capsys, tmp_path):
    p = tmp_path / "s.csv"
    write_matrix_csv(p, np.random.default_rng(0).standard_normal((5, 10)))
    code, out, err = call(capsys, "estimate", "--sample", p, "--k", 9)
    assert code == 1 and out == ""
    assert err.startswith("insufficient-sample: ") and err.count("\n") == 1


def test_usage_and_input_errors(capsys, tmp_path, diag123):
    code, _, err = call(capsys, "psi", "--cov", diag123, "--k", 2, "--bogus")
    assert code == 1 and err.startswith("usage: ")
    code, _, err = call(capsys, "psi", "--cov", diag123, "--k", 0)
    assert code == 1 and err.startswith("usage: ")
    code, _, err = call(capsys, "psi", "--cov", diag123, "--k", 4)
    assert code == 1 and err.startswith("domain: ")
    code, _, err = call(capsys, "psi", "--cov", tmp_path / "missing.csv", "--k", 1)
    assert code == 1 and err.startswith(("io: ", "domain: "))
    code, _, err = call(capsys, "--seed", "-3", "psi", "--cov", diag123, "--k", 1)
    assert code == 1 and err.startswith("usage: ")
    code, _, err = call(capsys)
    assert code == 1 and err.startswith("usage: ")


def test_maxdiv_round_trip(capsys, tmp_path):
    p = tmp_path / "c.csv"
    t = np.linspace(0, 1, 5)
    write_matrix_csv(p, np.array([(a, b) for a in t for b in t]))
    code, out, _ = call(capsys, "maxdiv", "--candidates", p, "--k", 2)
    assert code == 0
    data = json.loads(out)
    mu, rep = measure_from_dict(data)
    assert rep.certified(1e-7)
    assert data["dual"]["traceResidual"] <= 1e-8


def test_maxdiv_not_converged_exit_2(capsys, tmp_path):
    p = tmp_path / "c.csv"
    write_matrix_csv(p, np.random.default_rng(1).standard_normal((60, 3)))
    out_file = tmp_path / "r.json"
    code, out, err = call(capsys, "--out", out_file, "maxdiv", "--candidates", p, "--k", 3,
                          "--tol", "1e-14", "--max-iter", 2)
    assert code == 2 and err.startswith("not-converged")
    assert json.loads(out_file.read_text())["certificate"]["converged"] is False


def test_design_single_k(capsys):
    code, out, _ = call(capsys, "design", "--model", "poly:2", "--k", 2)
    assert code == 0
    data = json.loads(out)
    rep = DesignReport.from_dict(data)
    w = sorted(rep.polished_weights)
    assert w[0] == pytest.approx((33 ** 0.5 - 1) / 16, abs=1e-8)


def test_design_regressor_file_all_k(capsys, tmp_path):
    t = np.linspace(-1, 1, 21)
    p = tmp_path / "f.csv"
    write_matrix_csv(p, np.column_stack([np.ones_like(t), t]))
    code, out, _ = call(capsys, "design", "--regressors", p, "--all-k")
    assert code == 0
    data = json.loads(out)
    assert data["ks"] == [1, 2]
    np.testing.assert_allclose(data["efficiency"], np.ones((2, 2)), atol=1e-9)


def test_design_bad_model(capsys):
    code, _, err = call(capsys, "design", "--model", "spline:3", "--k", 1)
    assert code == 1 and err.startswith("domain: ")


def test_tables_example_5(capsys):
    code, out, _ = call(capsys, "tables", "--example", 5)
    assert code == 0
    data = json.loads(out)
    assert data["ks"] == [1, 2, 3]
    table = np.array(data["efficiency"])
    np.testing.assert_allclose(np.diag(table), 1.0, atol=1e-9)
    assert table[2][0] == pytest.approx(0.8889, abs=1e-3)


def test_simulate_outputs(capsys, tmp_path):
    csv = tmp_path / "ratios.csv"
    code, out, _ = call(capsys, "--seed", 7, "simulate", "--gen", "uniform-cube:4", "--n", 20,
                        "--k", "1,3", "--reps", 30, "--csv", csv, "--workers", 2)
    assert code == 0
    data = json.loads(out)
    assert data["generator"]["seed"] == 7
    reps = [MonteCarloReport.from_dict(r) for r in data["reports"]]
    assert [r.k for r in reps] == [1, 3]
    lines = csv.read_text().splitlines()
    assert lines[0] == "k,replicate,ratio" and len(lines) == 61


def test_seed_flag_and_environment(capsys, monkeypatch):
    argv = ["simulate", "--gen", "normal:3", "--n", 10, "--k", "2", "--reps", 5]
    _, a, _ = call(capsys, "--seed", 5, *argv)
    _, b, _ = call(capsys, "--seed", 5, *argv)
    assert a == b
    monkeypatch.setenv("GVAR_SEED", "5")
    _, c, _ = call(capsys, *argv)
    assert c == a
    monkeypatch.delenv("GVAR_SEED")
    _, d, _ = call(capsys, *argv)
    assert d != a and json.loads(d)["generator"]["seed"] == 0


def test_module_entry_point(diag123):
    res = subprocess.run([sys.executable, "-m", "extgvar", "psi", "--cov", str(diag123), "--k", "1"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["psi"] == pytest.approx(12.0)

import csv
import json
import math

import numpy as np
import pytest

from hgmode.cli import Table, failure_onset, main, make_oracle, resolve_problem
from hgmode.operators import Grid, companion_system, parse_operator
from hgmode.precision import get_precision
from hgmode.reference import airy_ai, hkn_gauged_initial, hkn_gauged_oracle, hkn_gauged_system
from hgmode.steppers import Stepper, rk45_solve, solve_ivp


def read_csv(path):
    lines = [ln for ln in open(path) if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def test_oracle_airy(capsys):
    assert main(["oracle", "--airy", "--at", "5"]) == 0
    out = capsys.readouterr().out
    assert "0.000108344" in out


def test_oracle_hkn(capsys):
    assert main(["oracle", "--hkn", "10", "1", "1", "--at", "40"]) == 0
    value = float(capsys.readouterr().out.strip().splitlines()[-1].split(",")[1])
    assert abs(value - 815.0105773587113) <= 1e-12 * 815


def test_solve_ivp_csv_and_sidecar(tmp_path):
    out = tmp_path / "airy.csv"
    code = main(["solve-ivp", "--problem", "airy", "--h", "1e-3", "--N", "10000", "--record-every", "1000",
                 "--output", str(out)])
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["t", "f", "f'", "reference", "rel_error"]
    at5 = next(r for r in rows if float(r[0]) == 5)
    assert abs(float(at5[1]) + 0.147395) < 5e-5 and abs(float(at5[2]) + 0.322215) < 5e-5
    diag = json.loads((tmp_path / "airy.csv.diag.json").read_text())
    assert diag["status"] == "ok"
    assert diag["failure_onset"] < 5
    assert any(ln.startswith("#") for ln in open(out))


def test_defuse_sidecar(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["defuse", "--problem", "airy", "--h", "1e-3", "--N", "10000", "--digits", "30",
                 "--record-every", "1000", "--output", str(out)]) == 0
    diag = json.loads((tmp_path / "d.csv.diag.json").read_text())
    assert len(diag["eigenvalues"]) == 2
    _, rows = read_csv(out)
    f5 = float(next(r for r in rows if float(r[0]) == 5)[1])
    assert abs(f5 - 1.0834e-4) < 1e-7


def test_perturb_byte_identical(tmp_path):
    args = ["perturb", "--problem", "hkn_sib_1e4", "--method", "fit-b", "--basis", "asymptotic", "--count", "4",
            "--mode", "penalized", "--trials", "30", "--rel", "1e-3", "--seed", "7"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--output", str(a)]) == 0
    assert main(args + ["--output", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    header, rows = read_csv(a)
    assert sum(h.startswith("trial") for h in header) == 30
    diag = json.loads((tmp_path / "a.csv.diag.json").read_text())
    assert len(diag["trial_max_rel_error"]) == 30
    assert diag["ensemble_max_rel_error"] > 0


def test_perturb_seed_changes_ensemble(tmp_path):
    base = ["perturb", "--problem", "exp_airy_short", "--method", "fit-b", "--basis", "chebyshev", "--count", "10",
            "--trials", "3"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(base + ["--seed", "1", "--output", str(a)]) == 0
    assert main(base + ["--seed", "2", "--output", str(b)]) == 0
    assert a.read_bytes() != b.read_bytes()


def test_exit_code_parse_error(capsys):
    assert main(["solve-ivp", "--problem", '{"operator": "d^2 - * t", "interval": [0, 1], "initial": [1, 0]}']) == 2
    assert main(["solve-ivp", "--problem", "no_such_problem_anywhere"]) == 2


def test_exit_code_numerical_failure(tmp_path, capsys):
    problem = '{"operator": "d^2 - t", "interval": [-1, 1], "conditions": [[-1, 1], [-1, 1]]}'
    out = tmp_path / "s.csv"
    assert main(["spectral", "--problem", problem, "--n", "16", "--output", str(out)]) == 3
    diag = json.loads((tmp_path / "s.csv.diag.json").read_text())
    assert diag["status"] == "failed"


def test_resolve_bundled_and_inline():
    assert resolve_problem("airy").operator.rank == 2
    assert resolve_problem('{"operator": "d - 1", "interval": [0, 1]}').operator.rank == 1


def test_failure_onset_exact_table():
    prec = get_precision(16)
    ts = prec.array([0, 1, 2, 3])
    values = np.array([float(airy_ai(t, 30)) for t in range(4)])
    oracle = make_oracle("airy", None, prec)
    assert failure_onset((ts, values), oracle) == math.inf


def test_failure_onset_skips_oracle_zero():
    notes = []
    oracle = {0.0: 0.0, 1.0: 1.0, 2.0: 1.0}.get
    onset = failure_onset(([0.0, 1.0, 2.0], [1.0, 1.1, 5.0]), oracle, notes=notes)
    assert onset == 2.0
    assert len(notes) == 1


def test_failure_onset_airy_rk4():
    prec = get_precision(16)
    S = companion_system(parse_operator("d^2 - t"))
    tab = solve_ivp(Stepper.rk4(), S, prec.array(["0.355", "-0.259"]), Grid(0, "0.001", 10000), prec,
                    record_every=100)
    assert failure_onset(tab, lambda t: airy_ai(t, 30)) < 5


def test_failure_onset_gauged_rk45_band():
    prec = get_precision(16)
    S = hkn_gauged_system(10, 1, 1)
    F0 = hkn_gauged_initial(10, 1, 1, 1, prec)
    ts = np.arange(1, 31, 0.5)
    tab = rk45_solve(S, F0, 1, 30, rtol=1e-3, atol=0, prec=prec, t_eval=ts)
    oracle = hkn_gauged_oracle(10, 1, 1, 30)
    onset = failure_onset(tab, lambda t: float(oracle(t)))
    assert 15 <= onset <= 30

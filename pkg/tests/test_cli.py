import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import cqreg.cli as cli
from cqreg import read_csv, trimmed_mean_effect, fit
from cqreg.errors import SolverError

HERE = Path(__file__).parent
GOLDEN = HERE / "golden"


@pytest.fixture
def in_tests(monkeypatch):
    monkeypatch.chdir(HERE)


def run(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = cli.main([*args, "--output", str(out)])
    return code, (out.read_text() if out.exists() else None)


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.mark.parametrize("golden,args", [
    ("fit_one_sample.json", ["fit", "--input", "data/one_sample.csv"]),
    ("fit_two_sample.json", ["fit", "--input", "data/two_sample.csv"]),
    ("fit_regression.json", ["fit", "--input", "data/regression.csv"]),
    ("km_one_sample.json", ["km", "--input", "data/one_sample.csv"]),
    ("se_two_sample.json", ["se", "--input", "data/two_sample.csv", "--taus",
                            "0.25,0.5,0.75", "--boot", "50", "--seed", "7",
                            "--trim", "0.1,0.8"]),
])
def test_golden_outputs(in_tests, tmp_path, golden, args):
    code, text = run(args, tmp_path)
    assert code == 0
    assert text == (GOLDEN / golden).read_text()


def test_small_example(tmp_path):
    src = write(tmp_path, "d.csv", "time,status\n1,0\n2,1\n3,1\n")
    code, text = run(["fit", "--input", src], tmp_path)
    doc = json.loads(text)
    assert code == 0
    assert doc["process"]["breakpoints"] == [0, 0.5]
    assert doc["process"]["coefficients"] == [[2], [3]]
    code, text = run(["km", "--input", src], tmp_path, "km.json")
    doc = json.loads(text)
    assert doc["distribution"] == {"times": [2, 3], "F": [0.5, 1]}
    assert doc["nelson_aalen"]["increments"] == [0.5, 1]


def test_floats_round_trip():
    vals = [0.1, 1 / 3, 2.0 ** -1074, 1e300, -0.0, 123456789.123456789]
    assert json.loads(cli.dumps(vals)) == vals
    assert cli.dumps([math.inf, math.nan]) == "[null, null]"


def test_fit_and_km_agree(in_tests, tmp_path):
    _, f = run(["fit", "--input", "data/one_sample.csv"], tmp_path)
    _, k = run(["km", "--input", "data/one_sample.csv"], tmp_path, "km.json")
    proc, inv = json.loads(f)["process"], json.loads(k)["inverse"]
    taus = np.linspace(0, proc["tau_end"], 400, endpoint=False)
    taus = taus[np.min(np.abs(taus[:, None] - np.array(inv["tau"])[None]), axis=1) > 1e-9]
    k_fit = np.searchsorted(proc["breakpoints"], taus, side="right") - 1
    k_km = np.searchsorted(inv["tau"], taus, side="right") - 1
    np.testing.assert_array_equal(np.array(proc["coefficients"])[k_fit, 0],
                                  np.array(inv["time"])[k_km])
    assert proc["tau_end"] == pytest.approx(inv["total_mass"], abs=1e-12)


def test_log_time_matches_prelogged(tmp_path):
    rows = read_csv(HERE / "data" / "two_sample.csv")
    raw = "time,status,group\n" + "".join(
        f"{math.exp(x)!r},{d},{g}\n" for x, d, g in zip(rows.x, rows.delta, rows.z[:, 1]))
    logged = "time,status,group\n" + "".join(
        f"{math.log(math.exp(x))!r},{d},{g}\n"
        for x, d, g in zip(rows.x, rows.delta, rows.z[:, 1]))
    _, a = run(["fit", "--input", write(tmp_path, "raw.csv", raw), "--log-time"], tmp_path)
    _, b = run(["fit", "--input", write(tmp_path, "log.csv", logged)], tmp_path, "b.json")
    assert json.loads(a)["process"] == json.loads(b)["process"]


def test_process_csv(in_tests, tmp_path):
    table = tmp_path / "segments.csv"
    code, text = run(["fit", "--input", "data/regression.csv", "--process-csv", str(table)],
                     tmp_path)
    proc = json.loads(text)["process"]
    lines = table.read_text().splitlines()
    assert lines[0] == "tau_lo,tau_hi,flag,intercept,treat,score"
    assert len(lines) == 1 + len(proc["breakpoints"])
    assert float(lines[1].split(",")[3]) == proc["coefficients"][0][0]


def test_stdin_input():
    text = (HERE / "data" / "one_sample.csv").read_bytes()
    res = subprocess.run([sys.executable, "-m", "cqreg.cli", "fit", "--input", "-"],
                         input=text, capture_output=True, check=True)
    doc = json.loads(res.stdout)
    want = json.loads((GOLDEN / "fit_one_sample.json").read_text())
    assert doc["process"] == want["process"]


def test_trimmed_block_is_exact(in_tests, tmp_path):
    code, text = run(["se", "--input", "data/two_sample.csv", "--taus", "0.5", "--boot",
                      "20", "--seed", "3", "--trim", "0,0.8"], tmp_path)
    assert code == 0
    got = json.loads(text)["bootstrap"]["trimmed"]["estimate"]
    want = trimmed_mean_effect(fit(read_csv("data/two_sample.csv")), 0.0, 0.8)
    assert got == want.tolist()


def test_se_is_deterministic(in_tests, tmp_path):
    args = ["se", "--input", "data/regression.csv", "--taus", "0.3", "--boot", "30",
            "--seed", "7"]
    assert run(args, tmp_path, "a.json") == run(args, tmp_path, "b.json")


@pytest.mark.parametrize("args,needle", [
    (["simulate", "--scenario", "2", "--reps", "1"], "reps"),
    (["km", "--input", "data/two_sample.csv"], "group"),
    (["se", "--input", "data/one_sample.csv", "--taus", "0.99", "--boot", "10"], "tau_end"),
    (["se", "--input", "data/one_sample.csv", "--taus", "abc"], "probabilities"),
    (["fit", "--input", "data/missing.csv"], "missing.csv"),
])
def test_user_errors_exit_2(in_tests, tmp_path, capsys, args, needle):
    code, _ = run(args, tmp_path)
    assert code == 2
    err = capsys.readouterr().err
    assert needle in err and len(err.strip().splitlines()) == 1


def test_constant_covariate_exit_2(tmp_path, capsys):
    src = write(tmp_path, "c.csv", "time,status,site\n1,1,3\n2,1,3\n3,0,3\n")
    code, _ = run(["fit", "--input", src], tmp_path)
    assert code == 2
    assert "site" in capsys.readouterr().err


def test_malformed_row_exit_2(tmp_path):
    src = write(tmp_path, "m.csv", "time,status\n1,1\n2,maybe\n")
    assert run(["fit", "--input", src], tmp_path)[0] == 2


def test_internal_failure_exit_1(in_tests, tmp_path, monkeypatch):
    def broken(*a, **k):
        raise SolverError("forced")

    monkeypatch.setattr(cli, "fit", broken)
    assert run(["fit", "--input", "data/one_sample.csv"], tmp_path)[0] == 1


def test_simulate_writes_table(tmp_path):
    table = tmp_path / "table.txt"
    code, text = run(["simulate", "--scenario", "3", "--n", "80", "--reps", "4", "--seed",
                      "1", "--table", str(table)], tmp_path)
    assert code == 0
    doc = json.loads(text)
    assert doc["report"]["banner"]
    assert table.read_text().startswith("NOTE:")

import csv
import io
import json

import pytest

from phi3ren import contraction as C
from phi3ren.cli import main
from phi3ren.terms import expand_solution, series_from_json


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_expand_json(capsys):
    code, out, _ = run(capsys, "expand", "--order", "2")
    assert code == 0
    assert series_from_json(json.loads(out)) == expand_solution(2)
    assert '"num": "3"' in out


def test_expand_order_zero_and_invalid(capsys):
    code, out, _ = run(capsys, "expand", "--order", "0", "--format", "text")
    assert code == 0 and out.strip() == "F0: 1 Φ"
    assert run(capsys, "expand", "--order", "-1")[0] == 2
    assert run(capsys, "expand", "--order", "1", "--format", "dot")[0] == 2
    assert run(capsys, "nonsense")[0] == 2


def test_diagrams(capsys):
    code, out, _ = run(capsys, "diagrams", "--d", "3")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 4 and all(int(r["N"]) <= 20 for r in rows)
    code, out, _ = run(capsys, "diagrams", "--d", "2", "--nmax", "4")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert any(r["N"] == "2" and r["L"] == "2" and r["rho"] == "0" for r in rows)
    code, _, err = run(capsys, "diagrams", "--d", "4")
    assert code == 3 and "NotSubcritical" in err
    code, out, _ = run(capsys, "diagrams", "--d", "3", "--format", "dot")
    assert code == 0 and out.count("graph G") == 4


def test_correlate_round_trip(capsys):
    code, out, _ = run(capsys, "correlate", "--order", "1", "--at-zero")
    data = json.loads(out)
    back = [C.diagram_from_json(x) for x in data["orders"]["1"]]
    assert code == 0
    assert C.equal_sums(back, C.evaluate_at_zero(C.two_point_correlation(1)[1]))


def test_renorm_eq(capsys):
    code, out, _ = run(capsys, "renorm-eq", "--order", "2", "--format", "text")
    assert code == 0
    assert "M1: 3 · [v0(root)(arg): C1]" in out and out.count("M2: -18") == 3
    assert run(capsys, "renorm-eq", "--order", "0")[0] == 2


def test_sd(capsys):
    code, out, _ = run(capsys, "sd", "--d", "1", "--power", "1", "2")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [abs(float(r["error"])) < 0.15 for r in rows] == [True, True]


def test_kernel_kl(capsys):
    code, out, _ = run(capsys, "kernel", "--kl", "--d", "2", "--n", "1", "--points", "5",
                       "--format", "json")
    data = json.loads(out)
    assert code == 0 and data["max_rel_err"] < 1e-5 and len(data["rows"]) == 5


def test_config_and_out(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nnt = 24\nnx = 16\ndx = 0.25\ndt = 0.015625\nsamples = 400\n")
    out = tmp_path / "mc.csv"
    code, _, _ = run(capsys, "mc", "--validate", "covariance", "--seed", "7",
                     "--config", str(cfg), "--out", str(out))
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert code == 0 and rows[0]["name"] == "covariance" and rows[0]["samples"] == "400"
    again = tmp_path / "mc2.csv"
    run(capsys, "mc", "--validate", "covariance", "--seed", "7", "--config", str(cfg),
        "--out", str(again))
    assert again.read_text() == out.read_text()


def test_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    code, _, err = run(capsys, "mc", "--config", str(bad))
    assert code == 2 and "unknown key" in err
    assert run(capsys, "mc", "--config", str(tmp_path / "missing.cfg"))[0] == 2


@pytest.mark.slow
def test_mc_first_order_exit_code(capsys):
    code, out, _ = run(capsys, "mc", "--validate", "first-order", "--seed", "7")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 6 and all(r["passed"] == "True" for r in rows)


def test_non_convergence_exit_code(monkeypatch, capsys):
    from phi3ren import cli
    from phi3ren.scaling import NonConvergence

    def boom(*a, **k):
        raise NonConvergence("radius extrapolation did not settle")

    monkeypatch.setattr(cli, "estimate_sd", boom)
    code, _, err = run(capsys, "sd", "--d", "1")
    assert code == 4 and "non-convergence" in err

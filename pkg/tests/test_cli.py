import json

import pytest

from sparse_asympt import cli
from sparse_asympt.costmodel import derive_cost
from sparse_asympt.queries import EMPTY, TaskSet

from conftest import DATA, load


def f(name):
    return str(DATA / f"{name}.cinp")


def call(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_ok(capsys):
    assert call(capsys, "check", f("spgemm_gustavson")) == (0, "ok\n", "")


def test_check_syntax_error(capsys):
    code, _, err = call(capsys, "check", f("bad_syntax"))
    assert code == 1 and ":3:34:" in err


def test_check_diagnostics(capsys, tmp_path):
    p = tmp_path / "x.cinp"
    p.write_text("tensor a {I} format (c)\ntensor b {I} format (u)\nforall i: a[a i] += b[s i]\n")
    code, out, _ = call(capsys, "check", str(p), "--json")
    assert code == 1
    assert json.loads(out)["diagnostics"][0]["code"] == "format"


def test_missing_file(capsys):
    code, _, err = call(capsys, "check", "/nonexistent.cinp")
    assert code == 1 and "error" in err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 2
    code, _, err = call(capsys, "validate", f("spgemm_gustavson"), "--density", "2")
    assert code == 2 and "density" in err


def test_cost_json(capsys):
    code, out, _ = call(capsys, "cost", f("spgemm_gustavson"), "--sunk", "none", "--assume", "none", "--json")
    assert code == 0
    data = json.loads(out)
    assert len(data["sites"]) == 5
    assert TaskSet.from_json(data["total"]) == derive_cost(load("spgemm_gustavson")).total


def test_cost_text(capsys):
    code, out, _ = call(capsys, "cost", f("spgemm_outer"))
    assert code == 0 and out.splitlines()[-1].startswith("total: ")


def test_compare_self(capsys):
    code, out, _ = call(capsys, "compare", f("spgemm_outer"), f("spgemm_outer"))
    assert code == 0 and out.splitlines()[0] == "Equivalent"


def test_compare_outer_gustavson(capsys):
    code, out, _ = call(capsys, "compare", f("spgemm_outer"), f("spgemm_gustavson"), "--json")
    data = json.loads(out)
    assert data["verdict"] == "StrictlyContained"
    assert data["witnesses"]["a<=b"]


def test_compare_sddmm(capsys):
    code, out, _ = call(capsys, "compare", f("sddmm_fused"), f("sddmm_unfused"), "--sunk", "none", "--assume", "none")
    assert out.splitlines()[0] == "StrictlyContained"
    assert any("via" in ln for ln in out.splitlines())


def test_validate_pass(capsys):
    code, out, _ = call(capsys, "validate", f("spgemm_gustavson"), "--dims", "8", "--density", "0.3", "--trials", "5")
    assert code == 0 and out.startswith("PASS (5 trials")


def test_validate_empty_instance(capsys):
    code, out, _ = call(capsys, "validate", f("spgemm_gustavson"), "--density", "0", "--json")
    data = json.loads(out)
    assert code == 0 and data["pass"] and all(r["tasks"] == 0 for r in data["trials"])


def test_validate_detects_corrupted_cost(capsys, monkeypatch):
    def broken(p):
        c = derive_cost(p)
        site = next(iter(c.compute))
        c.compute[site] = EMPTY
        return c

    monkeypatch.setattr(cli, "derive_cost", broken)
    code, out, _ = call(capsys, "validate", f("spgemm_gustavson"), "--density", "0.5")
    assert code == 1 and out.startswith("FAIL trial 0 at S3:A: extra task")


def test_gen_then_validate(capsys, tmp_path):
    code, out, _ = call(capsys, "gen", f("spgemm_gustavson"), "--out", str(tmp_path), "--dims", "6", "--seed", "3")
    assert code == 0 and {p.name for p in tmp_path.iterdir()} == {"B.tns", "C.tns"}
    code, out, _ = call(capsys, "validate", f("spgemm_gustavson"), "--inputs", str(tmp_path))
    assert code == 0 and out.startswith("PASS (1 trials")


def test_schedule_json(capsys, tmp_path):
    target = tmp_path / "out.json"
    code, out, _ = call(capsys, "schedule", "spmv", "--taco", "--json", str(target), "--count")
    assert code == 0 and "min-depth schedules (counted): 4" in out
    data = json.loads(target.read_text())
    assert data["kernel"] == "spmv" and data["frontier"] and data["min_depth_count"] == 4


def test_schedule_empirical(capsys):
    code, out, _ = call(capsys, "schedule", "spmv2", "--empirical", "--dims", "8", "--density", "0.2", "--json")
    data = json.loads(out)
    tasks = [r["tasks"] for r in data["ranking"]]
    assert code == 0 and tasks == sorted(tasks)


def test_schedule_unknown_kernel(capsys):
    code, _, err = call(capsys, "schedule", "nosuchkernel")
    assert code == 1 and "unknown kernel" in err


def test_deterministic_output(capsys):
    a = call(capsys, "cost", f("sddmm_unfused"), "--json")
    b = call(capsys, "cost", f("sddmm_unfused"), "--json")
    assert a == b

import csv
import io
import json
from pathlib import Path

import pytest

from zsposg.cli import main

FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_matching_pennies(tmp_path, capsys):
    code, out, _ = run(capsys, "solve", "--model", "builtin:matching_pennies", "--epsilon-frac", "0.01",
                       "--out", str(tmp_path), "--convert-strategies")
    assert code == 0
    summary = json.loads(out)
    assert summary["gap"] <= 0.06 and summary["lower"] - 1e-9 <= 0.2 <= summary["upper"] + 1e-9
    for name in ("runlog.json", "manifest.json", "strategy1_tree.json", "strategy2_tree.json",
                 "strategy1_behavioral.json", "strategy2_behavioral.json"):
        assert (tmp_path / name).exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["outcome"]["stop_reason"] == "converged"
    assert manifest["config"]["epsilon"] == pytest.approx(0.06)


def test_solved_strategies_evaluate(tmp_path, capsys):
    run(capsys, "solve", "--model", "builtin:matching_pennies", "--out", str(tmp_path),
        "--convert-strategies")
    for kind in ("tree", "behavioral"):
        code, out, _ = run(capsys, "eval", "--model", "builtin:matching_pennies",
                           "--strategy1", str(tmp_path / f"strategy1_{kind}.json"),
                           "--strategy2", str(tmp_path / f"strategy2_{kind}.json"))
        assert code == 0 and json.loads(out)["exploitability"] <= 0.03 + 1e-6


def test_rho_too_large_rejected(capsys):
    code, _, err = run(capsys, "solve", "--model", "builtin:matching_pennies", "--rho", "1.0")
    assert code == 64 and "radius" in err


def test_zero_budget_is_partial(tmp_path, capsys):
    code, _, _ = run(capsys, "solve", "--model", "builtin:matching_pennies", "--max-seconds", "0",
                     "--out", str(tmp_path))
    assert code == 2
    log = json.loads((tmp_path / "runlog.json").read_text())
    assert log["final"]["stop_reason"] == "max_seconds" and len(log["records"]) == 1


def test_bad_flags_exit_64(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--model", "builtin:matching_pennies", "--lambda", "nope"])
    assert exc.value.code == 64
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 64


def test_data_errors_exit_65(tmp_path, capsys):
    code, _, _ = run(capsys, "oracle", "--model", str(tmp_path / "missing.json"))
    assert code == 65
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    code, _, err = run(capsys, "oracle", "--model", str(bad))
    assert code == 65 and "bad.json" in err


def test_oracle_prints_value(capsys):
    code, out, _ = run(capsys, "oracle", "--model", "builtin:matching_pennies")
    assert code == 0 and abs(float(out) - 0.2) <= 1e-7
    code, out, _ = run(capsys, "oracle", "--model", "builtin:matching_pennies", "--method", "both")
    vals = json.loads(out)
    assert abs(vals["sflp"] - vals["brute"]) <= 1e-7


def test_eval_uniform_fixture(capsys):
    code, out, _ = run(capsys, "eval", "--model", "builtin:matching_pennies",
                       "--strategy1", str(FIXTURES / "mp_uniform_p1.json"),
                       "--strategy2", str(FIXTURES / "mp_uniform_p2.json"))
    res = json.loads(out)
    assert code == 0 and res["exploitability"] == pytest.approx(0.25)
    assert set(res) == {"nu1", "nu2", "exploitability", "sl_gap_pct"}


def test_eval_wrong_player(capsys):
    code, _, _ = run(capsys, "eval", "--model", "builtin:matching_pennies",
                     "--strategy1", str(FIXTURES / "mp_uniform_p2.json"),
                     "--strategy2", str(FIXTURES / "mp_uniform_p2.json"))
    assert code == 65


def test_bench_row(tmp_path, capsys):
    path = tmp_path / "bench.csv"
    code, _, _ = run(capsys, "bench", "--models", "builtin:matching_pennies", "--out", str(path))
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    assert code == 0 and len(rows) == 1 and rows[0]["status"] == "converged"
    assert len(rows[0]["upper"].replace("-", "").replace(".", "").lstrip("0")) <= 6


def test_runlog_deterministic(tmp_path, capsys):
    logs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        run(capsys, "solve", "--model", "builtin:random:3:2x2x2x2", "--seed", "5", "--out", str(out))
        log = json.loads((out / "runlog.json").read_text())
        for rec in log["records"]:
            rec.pop("elapsed_ms")
        logs.append(json.dumps(log, sort_keys=True))
    assert logs[0] == logs[1]

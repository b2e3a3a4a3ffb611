import csv
import io
import json
import subprocess
import sys

import pytest

from lieflow.cli import run
from lieflow.pipeline import validate_report

SMALL = ["--h", "0.05", "--refine", "2"]


def _run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(argv, out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.mark.parametrize("mode", ["float", "exact"])
def test_verify_example(mode):
    code, out, err = _run(["verify", "--n", "3", "--grading", "0,1,0", "--mode", mode, "--samples", "5"])
    assert code == 0, err
    report = json.loads(out)
    validate_report(report)
    assert report["passed"] and report["status"] == "complete" and report["error"] is None
    assert "overall: PASS" in err
    if mode == "exact":
        assert all(c["residual_max"] == 0 for c in report["checks"])


def test_verify_is_deterministic():
    argv = ["verify", "--n", "4", "--grading", "1,0,0,1", "--samples", "4", "--seed", "3"]
    assert _run(argv)[1] == _run(argv)[1]


@pytest.mark.parametrize("argv", [
    ["verify", "--n", "3", "--grading", "1,2"],
    ["verify", "--n", "3", "--grading", "1,0"],
    ["verify", "--n", "0"],
    ["verify", "--config", "no-such-config"],
    ["solve", "--n", "2", "--h", "0.3"],
])
def test_configuration_errors_exit_2(argv):
    code, out, err = _run(argv)
    assert code == 2 and out == ""
    assert err.startswith("configuration error:")


def test_bad_json_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"n": 3,\n "grading": }')
    code, _, err = _run(["verify", "--config", str(path)])
    assert code == 2 and "line 2 column" in err


def test_exact_flows_reject_zero_grade_couplings(tmp_path):
    path = tmp_path / "a0.json"
    path.write_text(json.dumps({"n": 2, "coefficients": {"P": "identity", "Pbar": "identity", "A0": {"1": 1.0}}}))
    assert _run(["solve", "--config", str(path), "--mode", "exact"])[0] == 2


def test_solve_writes_report_and_fields(tmp_path):
    code, out, _ = _run(["solve", "--n", "3", "--grading", "0,1,0", *SMALL, "--out", str(tmp_path)])
    assert code == 0, out
    report = json.loads((tmp_path / "report.json").read_text())
    validate_report(report)
    names = [c["name"] for c in report["checks"]]
    assert len(names) == len(set(names))
    assert {"toda_equation", "mixed_log_derivative", "grid_inverse_relation"} <= set(names)
    assert "overall: PASS" in out
    for level, nodes in ((0, 21), (1, 21)):
        with open(tmp_path / f"fields_level{level}_site1.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["x", "y", "y[0][0]", "y[0][1]", "y[1][0]", "y[1][1]"]
        assert len(rows) == 1 + nodes * nodes
        assert float(rows[1][0]) == 0.0 and float(rows[-1][1]) == 1.0


def test_zero_coefficients_give_exact_orders(tmp_path):
    path = tmp_path / "zero.json"
    path.write_text(json.dumps({"n": 2, "coefficients": "zero", "samples": 2}))
    code, out, err = _run(["report", "--config", str(path), *SMALL])
    assert code == 0, err
    report = json.loads(out)
    orders = [c["order"] for c in report["checks"] if c["order"] is not None]
    assert orders and all(o == "exact" for o in orders)


def test_breakdown_exits_3_with_partial_report(tmp_path):
    path = tmp_path / "blowup.json"
    path.write_text(json.dumps({"n": 1, "coefficients": {"P": {"1": {"1": [[-10.0]]}}, "Pbar": "identity"}}))
    code, _, _ = _run(["report", "--config", str(path), *SMALL, "--samples", "2", "--out", str(tmp_path)])
    assert code == 3
    report = json.loads((tmp_path / "report.json").read_text())
    validate_report(report)
    assert report["status"] == "aborted" and not report["passed"]
    assert report["error"]["kind"] == "SingularPointError" and report["error"]["location"]
    assert any(c["name"] == "chevalley" for c in report["checks"])


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "lieflow.cli", "verify", "--n", "2", "--samples", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["format"] == "lieflow-report/1"

import io
import json
import subprocess
import sys

import pytest

from bellnosig.cli import main
from bellnosig.nosig import TestBatteryReport as BatteryReport


def run(args, capsys, stdin=None, monkeypatch=None):
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_fixture_group(capsys):
    code, out, _ = run(["analyze", "--fixture", "exp4.hrn1"], capsys)
    assert code == 0
    rows = [l for l in out.splitlines() if "~" in l]
    assert len(rows) == 4
    assert "63.6710" in out


def test_analyze_json_roundtrips(capsys):
    code, out, _ = run(["analyze", "--fixture", "exp4.hrn2", "--format", "json"], capsys)
    rep = BatteryReport.from_dict(json.loads(out))
    assert code == 0
    assert rep.chi2("A~Y|X=0") == pytest.approx(19.7646, abs=1e-4)
    assert json.loads(json.dumps(rep.to_dict())) == json.loads(out)


def test_fail_on_signal(capsys):
    code, _, err = run(["analyze", "--fixture", "exp4.qrn1", "--fail-on-signal", "1e-6"], capsys)
    assert code == 1 and "signal" in err
    assert run(["analyze", "--fixture", "exp4.qrn1"], capsys)[0] == 0
    assert run(["analyze", "--fixture", "exp12", "--fail-on-signal", "1e-12"], capsys)[0] == 0


def test_analyze_factorized_table_all_p_near_one(tmp_path, capsys):
    from bellnosig.tables import CountTable, PartyLayout
    import numpy as np

    lay = PartyLayout.binary()
    arr = np.einsum("x,y,a,b->xyab", [3, 5], [2, 7], [4, 1], [6, 6]) * 10
    path = tmp_path / "t.json"
    path.write_text(CountTable(lay, arr).dumps())
    code, out, _ = run(["analyze", str(path), "--format", "json"], capsys)
    assert code == 0
    assert all(e["p_corrected"] == pytest.approx(1.0) for e in json.loads(out)["entries"])


def test_analyze_reports_parse_position(capsys, monkeypatch):
    code, _, err = run(["analyze", "-"], capsys, "X,Y,A,B\n0,0,1,1\n0,1,1\n", monkeypatch)
    assert code == 2
    assert "line 3" in err


def test_analyze_needs_exactly_one_input(capsys):
    assert run(["analyze"], capsys)[0] == 2
    assert run(["analyze", "x.csv", "--fixture", "exp12"], capsys)[0] == 2


def test_analyze_variants(capsys):
    assert run(["analyze", "--fixture", "exp6.hrn", "--battery", "asymmetry"], capsys)[0] == 0
    code, out, _ = run(["analyze", "--fixture", "exp12", "--battery", "totals"], capsys)
    assert code == 0 and "X~Y|totals" in out
    code, out, _ = run(["analyze", "--fixture", "exp2"], capsys)
    assert "three-party/exp2" in out and "FORBIDDEN" in out
    code, out, _ = run(["analyze", "--fixture", "exp10"], capsys)
    assert "ph=267" in out
    code, _, err = run(["analyze", "--fixture", "exp4.hrn1", "--model", "combined"], capsys)
    assert code == 2 and "outcome_efficiency_check" in err
    code, out, _ = run(["analyze", "--fixture", "exp13", "--correction", "32"], capsys)
    assert "multiplier 32" in out


def test_simulate_is_deterministic(capsys):
    _, a, _ = run(["simulate", "--seed", "1", "--trials", "1000"], capsys)
    _, b, err = run(["simulate", "--seed", "1", "--trials", "1000"], capsys)
    assert a == b
    assert a.startswith("# layout:") and len(a.splitlines()) == 1002
    assert "trials=1000" in err


def test_simulate_zero_trials_writes_header(capsys):
    code, out, _ = run(["simulate", "--trials", "0"], capsys)
    assert code == 0
    assert out.splitlines()[1] == "X,Y,A,B"
    assert len(out.splitlines()) == 2


def test_simulate_invalid_config(capsys):
    assert run(["simulate", "--eta", "1.5"], capsys)[0] == 2


def test_reproduce(capsys):
    code, out, _ = run(["reproduce", "12"], capsys)
    assert code == 0 and "348" in out and "0.3" in out
    code, out, _ = run(["reproduce", "6"], capsys)
    for v in ("51", "78", "14.5", "35.5"):
        assert v in out
    assert code == 1  # HRN 51 is outside its tolerance, see the decisions ledger
    code, _, err = run(["reproduce", "99"], capsys)
    assert code == 2 and "unknown experiment" in err


def test_reproduce_json(capsys):
    code, out, _ = run(["reproduce", "10", "--format", "json"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc[0]["passed"] is True


def test_fixtures_listing_and_check(capsys):
    code, out, _ = run(["fixtures"], capsys)
    assert code == 0 and "exp13.amarg" in out
    code, out, _ = run(["fixtures", "--check"], capsys)
    assert out.count("MISMATCH") == 4
    code, out, _ = run(["fixtures", "--show", "exp12.full"], capsys)
    assert json.loads(out)["format"] == "bellnosig-table/1"


def test_calibrate_small(capsys):
    code, out, _ = run(["calibrate", "--scenario", "null", "--trials", "2000", "--replications", "4", "--format", "json"], capsys)
    assert code == 0
    assert set(json.loads(out)["rates"]) == {"A~Y|X=0", "A~Y|X=1", "B~X|Y=0", "B~X|Y=1"}


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "bellnosig", "reproduce", "13"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "A[11]~Y|X=0" in res.stdout


def test_pipeline_detects_planted_signal():
    sim = subprocess.run(
        [sys.executable, "-m", "bellnosig", "simulate", "--scenario", "signaling", "--trials", "1000000", "--seed", "3"],
        capture_output=True, text=True, check=True,
    )
    res = subprocess.run(
        [sys.executable, "-m", "bellnosig", "analyze", "-", "--fail-on-signal", "0.01"],
        input=sim.stdout, capture_output=True, text=True,
    )
    assert res.returncode == 1

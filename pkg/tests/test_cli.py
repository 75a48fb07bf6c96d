"""Command-line interface: exit codes, deterministic outputs, formats."""

import json
import subprocess
import sys

import pytest

from sectionscope.cli import config_hash, dumps_json, fmt_float, main


def run(argv):
    return main(argv)


def test_float_formatting_17_digits():
    assert fmt_float(0.1) == "0.10000000000000001"
    assert fmt_float(-1.5) == "-1.5"


def test_dumps_json_sorted_and_stable():
    a = dumps_json({"b": 1.0, "a": [True, None, 2]})
    b = dumps_json({"a": [True, None, 2], "b": 1.0})
    assert a == b
    assert a.index('"a"') < a.index('"b"')
    assert config_hash({"x": 1}) == config_hash({"x": 1})
    assert config_hash({"x": 1}) != config_hash({"x": 2})


def test_lagrange_report(tmp_path):
    out = tmp_path / "lp.json"
    code = run(["lagrange", "--mu", "0.5", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["version"]
    assert doc["config"] == {"mu": 0.5}
    assert len(doc["config_hash"]) == 16
    assert abs(doc["points"][0][0]) < 1e-10  # symmetric case: L1 at origin
    assert len(doc["points"]) == 5


def test_lagrange_rejects_degenerate_mu(capsys):
    assert run(["lagrange", "--mu", "0.0"]) == 1
    assert "config error" in capsys.readouterr().err


def test_bad_usage_exits_one():
    with pytest.raises(SystemExit) as exc:
        run(["no-such-command"])
    assert exc.value.code == 1


def test_byte_stable_outputs(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert run(["lagrange", "--mu", "0.3", "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    c, d = tmp_path / "c", tmp_path / "d"
    for out in (c, d):
        code = run(["section-scan", "--mu", "0.0", "--c", "-1.7",
                    "--n", "3", "--seed", "7", "--out", str(out)])
        assert code == 0
    assert (tmp_path / "c.csv").read_bytes() == \
        (tmp_path / "d.csv").read_bytes()
    assert (tmp_path / "c.json").read_bytes() == \
        (tmp_path / "d.json").read_bytes()


def test_hill_outputs(tmp_path):
    base = tmp_path / "hill"
    code = run(["hill", "--mu", "0.0121505856", "--c", "-1.6941705588302463",
                "--grid", "128", "--out", str(base)])
    assert code == 0
    doc = json.loads((tmp_path / "hill.json").read_text())
    assert doc["components"] == 3
    assert doc["bounded_components"] == 2
    lines = (tmp_path / "hill.csv").read_text().strip().splitlines()
    assert lines[0] == "q1,q2,U,inside"
    assert len(lines) == 128 * 128 + 1


def test_integrate_jsonl(tmp_path):
    out = tmp_path / "traj.jsonl"
    code = run(["integrate", "--mu", "0.0",
                "--state", "1,0,0,0,1,0", "--tf", "6.283185307179586",
                "--n", "20", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    header = json.loads(lines[0])
    assert header["chart_switches"] == 0
    assert header["energy"] == pytest.approx(-1.5, abs=1e-12)
    assert len(lines) == 21
    last = json.loads(lines[-1])
    assert last["state"][0] == pytest.approx(1.0, abs=1e-8)


def test_integrate_requires_state(capsys):
    assert run(["integrate", "--mu", "0.0"]) == 1


def test_section_scan_report(tmp_path):
    base = tmp_path / "scan"
    code = run(["section-scan", "--mu", "0.0", "--c", "-1.7", "--n", "5",
                "--seed", "1", "--out", str(base)])
    assert code == 0
    doc = json.loads((tmp_path / "scan.json").read_text())
    assert doc["n_ok"] + doc["n_failed"] == 5
    if doc["n_ok"]:
        # integrable mass ratio: the leaf label is carried exactly
        assert doc["max_leaf_delta"] < 1e-6
    lines = (tmp_path / "scan.csv").read_text().strip().splitlines()
    assert lines[0].startswith("index,x0")
    assert len(lines) == 6


def test_section_scan_ellipsoid_mode(tmp_path):
    out = tmp_path / "ell.json"
    code = run(["section-scan", "--mode", "ellipsoid", "--ellipsoid-b",
                "2.0", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["rotation_error"] < 1e-8


def test_find_orbit_vertical(tmp_path):
    out = tmp_path / "orbit.json"
    code = run(["find-orbit", "--mode", "vertical", "--mu", "0.0",
                "--c", "-1.7", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    orb = doc["orbit"]
    assert orb["residual"] < 1e-10
    assert orb["period"] == pytest.approx(1.0022163715043540, abs=1e-8)
    assert orb["symmetry"] == "vertical-collision"
    assert doc["reciprocal_pair_residual"] < 1e-5
    assert "find-orbit" in orb["command_line"]


def test_continue_family(tmp_path):
    out = tmp_path / "family.json"
    code = run(["continue", "--mu", "0.0", "--c", "-1.7", "--param", "mu",
                "--target", "2e-3", "--step", "1e-3", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["n_members"] == 3
    assert doc["members"][-1]["mu"] == pytest.approx(2e-3, abs=1e-15)


def test_verify_passes(tmp_path):
    out = tmp_path / "verify.json"
    code = run(["verify", "--seed", "0", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["passed"] is True
    assert doc["failures"] == []
    assert doc["transversality_min"] > 0


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "sectionscope.cli",
                          "--version"], capture_output=True, text=True)
    assert res.returncode == 0

import json

import numpy as np
import pytest

from abreulab.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main

SMALL = """
seed = 0
[domain]
omega = { center = [0.0, 0.0], radius = 1.0 }
omega0 = { kind = "disk", center = [0.0, 0.0], radius = 0.5 }
h = 0.0625
[model]
kind = "airy"
[barrier]
kind = "affine"
slope = [0.3, -0.2]
offset = 0.1
[scheme]
schedule = [0.1, 0.031622776601683794]
[direct]
restarts = 2
[output]
plots = false
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def test_selftest_and_fault_injection(capsys):
    assert main(["selftest"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS" in out and " s" in out
    assert main(["selftest", "--fault-injection"]) == EXIT_NUMERICAL
    assert "FAIL" in capsys.readouterr().out


def test_ma_test():
    assert main(["ma-test"]) == EXIT_OK


def test_config_errors(tmp_path, small_cfg):
    bad = tmp_path / "bad.toml"
    bad.write_text(SMALL.replace("h = 0.0625", ""))
    assert main(["solve-direct", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["sweep", "--config", str(tmp_path / "none.toml")]) == EXIT_CONFIG
    assert main(["solve-direct", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_check_assumptions(small_cfg, capsys):
    assert main(["check-assumptions", "--config", str(small_cfg)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "F0l" in out and "C_phi" in out


def test_solve_direct_affine_rigidity(small_cfg, tmp_path):
    out = tmp_path / "direct"
    assert main(["solve-direct", "--config", str(small_cfg), "--out", str(out)]) == EXIT_OK
    assert (out / "v_star.txt").read_bytes() == (out / "phi.txt").read_bytes()
    cert = json.loads((out / "certificate.json").read_text())
    for k in ("J", "primal_res", "dual_res", "convexity_worst", "restarts_spread"):
        assert k in cert
    assert cert["restarts_spread"] <= 1e-10


def test_sweep_rerun_is_identical(small_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", str(small_cfg), "--out", str(a), "--debug-snapshots"]) == EXIT_OK
    assert main(["sweep", "--config", str(small_cfg), "--out", str(b), "--threads", "2"]) == EXIT_OK
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    lines = [ln for ln in (a / "sweep.csv").read_text().splitlines() if not ln.startswith("#")]
    assert lines[0].split(",")[:3] == ["eps", "iters", "res_u"] and len(lines) == 3
    inv = json.loads((a / "invariants.json").read_text())
    assert inv
    assert any(p.name.startswith("snap") or "eps" in p.name for p in a.rglob("*.txt"))


def test_seed_override_changes_nothing_for_rigid_case(small_cfg, tmp_path):
    a, b = tmp_path / "s1", tmp_path / "s2"
    assert main(["solve-direct", "--config", str(small_cfg), "--out", str(a), "--seed", "1"]) == EXIT_OK
    assert main(["solve-direct", "--config", str(small_cfg), "--out", str(b), "--seed", "2"]) == EXIT_OK
    va = np.loadtxt(a / "v_star.txt", skiprows=1)
    vb = np.loadtxt(b / "v_star.txt", skiprows=1)
    assert np.array_equal(va, vb, equal_nan=True)

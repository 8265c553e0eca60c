import json

import numpy as np
import pytest

from maxrank.cli import (EXIT_CONFIG, EXIT_IDENTITY, EXIT_OK, BoundaryGen, main)
from maxrank.errors import ConfigError
from maxrank.grid import build_grid, load_field
from maxrank.verifier import boundary_convexity_floor


def run_cli(*args):
    return main(list(args))


def test_boundary_parse_and_guarantee():
    gen = BoundaryGen.parse("flat:1,2")
    assert gen.guarantee(2) == 1.0
    gen = BoundaryGen.parse("cosine:0.006,1")
    assert gen.guarantee(2) == pytest.approx(1 - 2 * 0.006 * (2 * np.pi) ** 2)
    gen = BoundaryGen.parse("mix:0:0.004:1;1:0.002:2")
    assert gen.guarantee(2) == pytest.approx(
        1 - 0.004 * (2 * np.pi) ** 2 - 0.002 * (4 * np.pi) ** 2)
    with pytest.raises(ConfigError):
        BoundaryGen.parse("flat")
    with pytest.raises(ConfigError):
        BoundaryGen.parse("wavelet:1")


def test_boundary_measured_floor_near_guarantee():
    spec = build_grid(2, 32, 8)
    gen = BoundaryGen.parse("cosine:0.006,1")
    u0, u1 = gen.build(spec)
    floor = boundary_convexity_floor(spec, u0, u1)
    # measured floor is at least the analytic guarantee minus O(h^2)
    assert floor >= gen.guarantee(2) - 5 * spec.hx**2


def test_solve_trivial_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    code = run_cli("solve", "--operator", "donaldson", "--n", "2", "--Nx", "8",
                   "--Nt", "8", "--epsilon", "4", "--boundary", "flat:1,2",
                   "--out", str(out))
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["solves"][0]["converged"] is True
    assert report["solves"][0]["iterations"] == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["operator"] == "donaldson"
    sol = load_field(out / "solution.fld")
    tt = np.arange(9) / 8
    assert np.abs(sol.values[0, 0, :] - (1 + tt**2)).max() == 0.0


def test_malformed_config_exit_2(tmp_path):
    code = run_cli("solve", "--n", "5", "--out", str(tmp_path / "r"))
    assert code == EXIT_CONFIG
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report["error"]["kind"] == "config"


def test_inadmissible_boundary_exit_2(tmp_path):
    code = run_cli("solve", "--boundary", "cosine:0.05,1", "--Nx", "8", "--Nt", "8",
                   "--out", str(tmp_path / "r"))
    assert code == EXIT_CONFIG


def test_verify_reports_rank_and_probe(tmp_path):
    out = tmp_path / "v"
    code = run_cli("verify", "--operator", "donaldson", "--n", "1", "--Nx", "16",
                   "--Nt", "16", "--epsilon", "0.5", "--boundary", "cosine:0.004,1",
                   "--out", str(out))
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["rank_report"]["floor_preserved"] is True
    assert report["rank_report"]["constant_rank"] is True
    assert "sup_ratio" in report["probe"]


def test_verify_existing_field(tmp_path):
    out1 = tmp_path / "a"
    assert run_cli("solve", "--operator", "donaldson", "--n", "1", "--Nx", "8",
                   "--Nt", "8", "--epsilon", "2", "--boundary", "flat:1,2",
                   "--out", str(out1)) == EXIT_OK
    out2 = tmp_path / "b"
    code = run_cli("verify", "--operator", "donaldson", "--n", "1", "--Nx", "8",
                   "--Nt", "8", "--epsilon", "2", "--boundary", "flat:1,2",
                   "--field", str(out1 / "solution.fld"), "--out", str(out2))
    assert code == EXIT_OK


def test_sweep_writes_levels(tmp_path):
    out = tmp_path / "s"
    code = run_cli("sweep", "--operator", "donaldson", "--n", "1", "--Nx", "8",
                   "--Nt", "8", "--epsilon", "2,1", "--boundary", "flat:1,2",
                   "--out", str(out))
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert [lv["epsilon"] for lv in report["levels"]] == [2.0, 1.0]
    assert all(lv["rank_report"]["floor_preserved"] for lv in report["levels"])
    assert (out / "solution_000.fld").exists() and (out / "solution_001.fld").exists()


def test_identity_command_and_determinism(tmp_path):
    out1 = tmp_path / "i1"
    code = run_cli("identity", "--check", "cross_term,form_agreement", "--n", "3",
                   "--seeds", "25", "--mode", "exact", "--out", str(out1))
    assert code == EXIT_OK
    report = json.loads((out1 / "report.json").read_text())
    assert report["checks"]["cross_term"]["max_discrepancy"] < 1e-9
    out2 = tmp_path / "i2"
    assert run_cli("identity", "--check", "cross_term,form_agreement", "--n", "3",
                   "--seeds", "25", "--mode", "exact", "--out", str(out2)) == EXIT_OK
    assert (out1 / "identity.csv").read_bytes() == (out2 / "identity.csv").read_bytes()
    r1 = json.loads((out1 / "report.json").read_text())
    r2 = json.loads((out2 / "report.json").read_text())
    assert r1 == r2


def test_identity_scaled_mode(tmp_path):
    out = tmp_path / "isc"
    code = run_cli("identity", "--check", "cross_term", "--n", "2", "--seeds", "10",
                   "--mode", "scaled:0.01", "--identity-tol", "0.5", "--out", str(out))
    assert code == EXIT_OK
    rows = (out / "identity.csv").read_text().strip().splitlines()
    assert rows[0] == "seed,check,n,num_good,mode,delta,discrepancy,flag_ok"
    assert len(rows) == 11
    assert ",scaled,0.01," in rows[1]


def test_identity_violation_exit_4(tmp_path):
    # an absurdly small tolerance forces the violation path
    out = tmp_path / "iv"
    code = run_cli("identity", "--check", "form_agreement", "--n", "3", "--seeds", "5",
                   "--mode", "scaled:0.01", "--identity-tol", "1e-30",
                   "--out", str(out))
    assert code == EXIT_IDENTITY
    report = json.loads((out / "report.json").read_text())
    assert report["error"]["kind"] == "identity_violation"


def test_solve_determinism_byte_identical(tmp_path):
    reports = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert run_cli("solve", "--operator", "donaldson", "--n", "1", "--Nx", "16",
                       "--Nt", "16", "--epsilon", "0.5", "--boundary",
                       "cosine:0.004,1", "--out", str(out)) == EXIT_OK
        reports.append((out / "report.json").read_bytes())
        reports.append((out / "solution.fld").read_bytes())
    assert reports[0] == reports[2]
    assert reports[1] == reports[3]


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"operator": "donaldson", "n": 1, "Nx": 8, "Nt": 8,
                               "epsilon": [2.0], "boundary": "flat:1,2"}))
    out = tmp_path / "c"
    code = run_cli("solve", "--config", str(cfg), "--epsilon", "2", "--out", str(out))
    assert code == EXIT_OK
    cfg.write_text(json.dumps({"unknown_key": 1}))
    assert run_cli("solve", "--config", str(cfg), "--out", str(out)) == EXIT_CONFIG


def test_report_command(tmp_path, capsys):
    out = tmp_path / "rr"
    assert run_cli("solve", "--operator", "donaldson", "--n", "1", "--Nx", "8",
                   "--Nt", "8", "--epsilon", "2", "--boundary", "flat:1,2",
                   "--out", str(out)) == EXIT_OK
    capsys.readouterr()
    assert run_cli("report", "--out", str(out)) == EXIT_OK
    text = capsys.readouterr().out
    assert "command: solve" in text and "converged=True" in text

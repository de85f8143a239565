import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from degenlap.cli import main


def run_cli(args):
    return main(list(args))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_weights_fixture_constant(tmp_path):
    out = tmp_path / "w"
    rc = run_cli(["weights", "--fixture", "constant", "--p", "2",
                  "--balls", "64", "--budget", "128", "--points", "16",
                  "--radii", "5", "--output-dir", str(out)])
    assert rc == 0
    rep = read_json(out / "weights-report.json")
    assert rep["schema"] == "degenlap/1"
    assert rep["weights_report"]["ap"]["estimates"]["ap"]["value"] == 1.0
    assert (out / "resolved-config.json").exists()
    assert (out / "worst-balls.csv").read_text().splitlines()[0].startswith("estimate,")


def test_weights_inline_unbounded(tmp_path):
    out = tmp_path / "w2"
    rc = run_cli(["weights", "--weight", "pow:-3", "--p", "2", "--dimension", "2",
                  "--balls", "96", "--budget", "512", "--points", "16",
                  "--radii", "6", "--output-dir", str(out)])
    assert rc == 0   # numerical flags are not process failures
    rep = read_json(out / "weights-report.json")
    assert rep["weights_report"]["ap"]["estimates"]["ap"]["value"] == "unbounded-suspected"


def test_weights_config_file_with_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "subcommand": "weights", "weight": "pow:0.5", "dimension": 1,
        "p": 2.0, "balls": 64, "budget": 128, "points": 8, "radii": 5,
        "output_dir": str(tmp_path / "from-file")}))
    out = tmp_path / "override"
    rc = run_cli(["weights", "--config", str(cfg), "--output-dir", str(out)])
    assert rc == 0
    resolved = read_json(out / "resolved-config.json")["config"]
    assert resolved["output_dir"] == str(out)   # flags win
    assert resolved["weight"] == "pow:0.5"


def test_solve_and_diagnose_roundtrip(tmp_path):
    sol = tmp_path / "s"
    rc = run_cli(["solve", "--fixture", "axis-degenerate-planar",
                  "--psi", "fixture-solution", "--resolution", "65",
                  "--output-dir", str(sol)])
    assert rc == 0
    rep = read_json(sol / "solve-report.json")["solve_report"]
    assert rep["converged"] is True
    dia = tmp_path / "d"
    rc = run_cli(["diagnose", "--fixture", "axis-degenerate-planar",
                  "--solution", str(sol / "solution.csv"), "--resolution", "65",
                  "--mask", "disc", "--probes", "3", "--budget", "256",
                  "--output-dir", str(dia)])
    assert rc == 0
    rows = (dia / "continuity.csv").read_text().splitlines()
    assert rows[0] == "x1,x2,mk,gamma,alpha,no_decay,class"
    assert len(rows) > 1


def test_solve_3d_memory_gate(tmp_path):
    out = tmp_path / "gate"
    rc = run_cli(["solve", "--fixture", "zhong-log", "--psi", "zhong-odd",
                  "--resolution", "64", "--output-dir", str(out)])
    assert rc == 0
    rep = read_json(out / "solve-report.json")["solve_report"]
    assert rep["notes"]["downsampled_from"] == 64
    assert rep["notes"]["resolution"] == 48
    resolved = read_json(out / "resolved-config.json")["config"]
    assert resolved["resolution"] == 48


def test_solve_pgm_output(tmp_path):
    out = tmp_path / "pgm"
    rc = run_cli(["solve", "--psi", "poly:x2-y2", "--resolution", "17",
                  "--pgm", "--output-dir", str(out)])
    assert rc == 0
    data = (out / "solution.pgm").read_bytes()
    assert data.startswith(b"P5\n17 17\n255\n")
    assert len(data) == len(b"P5\n17 17\n255\n") + 17 * 17


def test_distortion_subcommand(tmp_path):
    out = tmp_path / "dist"
    rc = run_cli(["distortion", "--samples", "24", "--output-dir", str(out)])
    assert rc == 0
    rep = read_json(out / "distortion-report.json")["distortion"]
    assert rep["ellipticity_violations"] == 0
    assert rep["sandwich_violations"] == 0
    lines = (out / "distortion-points.csv").read_text().splitlines()
    assert len(lines) == 25


def test_catalog_subcommand(tmp_path):
    out = tmp_path / "cat"
    rc = run_cli(["catalog", "--fixture", "constant", "--output-dir", str(out)])
    assert rc == 0
    rep = read_json(out / "catalog-report.json")
    assert rep["fixtures"][0]["fixture"] == "constant"
    assert rep["fixtures"][0]["passed"]


def test_exit_code_config_errors(tmp_path):
    assert run_cli(["weights", "--p", "2",
                    "--output-dir", str(tmp_path / "x")]) == 2
    assert run_cli(["solve", "--psi", "nonsense:1",
                    "--output-dir", str(tmp_path / "y")]) == 2
    assert run_cli(["catalog", "--fixture", "bogus",
                    "--output-dir", str(tmp_path / "z")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli(["weights", "--config", str(bad),
                    "--output-dir", str(tmp_path / "w")]) == 2
    missing = tmp_path / "missing.json"
    assert run_cli(["weights", "--config", str(missing),
                    "--output-dir", str(tmp_path / "v")]) == 2


def test_exit_code_grid_mismatch(tmp_path):
    sol = tmp_path / "s"
    assert run_cli(["solve", "--psi", "poly:x2-y2", "--resolution", "17",
                    "--output-dir", str(sol)]) == 0
    # diagnosing at a different resolution must fail with exit 2
    rc = run_cli(["diagnose", "--fixture", "axis-degenerate-planar",
                  "--solution", str(sol / "solution.csv"), "--resolution", "33",
                  "--mask", "disc", "--probes", "3",
                  "--output-dir", str(tmp_path / "d")])
    assert rc == 2


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-m", "degenlap.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "degenlap" in proc.stdout


def test_determinism_weights(tmp_path):
    out = tmp_path / "det"
    args = ["weights", "--weight", "pow:0.5", "--dimension", "1", "--p", "2",
            "--balls", "64", "--budget", "256", "--points", "8", "--radii", "5",
            "--seed", "11", "--output-dir", str(out)]
    assert run_cli(args) == 0
    snap = {p.name: p.read_bytes() for p in out.iterdir()}
    assert run_cli(args) == 0
    for p in out.iterdir():
        assert snap[p.name] == p.read_bytes()

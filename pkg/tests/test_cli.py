import json
import subprocess
import sys

import numpy as np
import pytest

from fvheat.cli import main, parse_alpha, read_config
from fvheat.mesh import load_mesh


def run(*argv):
    return main([str(a) for a in argv])


def test_mesh_stripes_report(tmp_path, capsys):
    assert run("mesh", "--family", "stripes", "--n", 16, "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "asymmetric: 165 (all interior)" in out
    m = load_mesh(tmp_path / "mesh_stripes_16.txt")
    assert m.n_dofs == 165
    assert (tmp_path / "mesh.config").exists()


def test_mesh_symmetric_and_interface(tmp_path, capsys):
    run("mesh", "--family", "symmetric", "--n", 8, "--out", tmp_path)
    assert "asymmetric: 0\n" in capsys.readouterr().out
    run("mesh", "--family", "interface", "--j", 4, "--out", tmp_path)
    # interior vertices on x = 1/4: 4J - 1
    assert "asymmetric: 15\n" in capsys.readouterr().out


def test_mesh_missing_level(tmp_path):
    with pytest.raises(SystemExit) as info:
        run("mesh", "--family", "interface", "--out", tmp_path)
    assert info.value.code != 0


def test_solve_semidiscrete(tmp_path):
    assert run("solve", "--n", 32, "--t", 0.1, "--out", tmp_path) == 0
    report = json.loads((tmp_path / "solve.json").read_text())
    assert report["err_l2"] > 0 and report["N"] == 32
    data = np.loadtxt(tmp_path / "solution.txt")
    assert data.shape == (33 * 33, 3)


@pytest.mark.parametrize("argv", [["--scheme", "be", "--k", "0.03"], ["--scheme", "cn"],
                                  ["--scheme", "cn", "--k", "-0.1"],
                                  ["--alpha", "1+x"]])
def test_solve_usage_errors(tmp_path, argv):
    with pytest.raises(SystemExit) as info:
        run("solve", "--n", 8, "--out", tmp_path, *argv)
    assert info.value.code == 2


def test_solve_general_routes(tmp_path):
    run("solve", "--n", 16, "--operator", "general", "--out", tmp_path)
    manufactured = json.loads((tmp_path / "solve.json").read_text())
    assert manufactured["operator"] == "general" and "err_l2" in manufactured
    run("solve", "--n", 16, "--operator", "general", "--alpha", "1+x*x/2;1+y*y/2",
        "--beta", "1+x*y", "--out", tmp_path)
    custom = json.loads((tmp_path / "solve.json").read_text())
    assert "err_l2" not in custom
    run("solve", "--n", 16, "--out", tmp_path)
    plain = np.loadtxt(tmp_path / "solution.txt")
    run("solve", "--n", 16, "--operator", "general", "--alpha", "1", "--beta", "0", "--out", tmp_path)
    reduced = np.loadtxt(tmp_path / "solution.txt")
    assert np.array_equal(plain, reduced)


def test_parse_alpha_shapes():
    x = np.array([0.1, 0.5])
    y = np.array([0.2, 0.3])
    a = parse_alpha("2;1+x;3")(x, y)
    assert a.shape == (2, 2, 2)
    assert np.allclose(a[:, 0, 1], 1 + x) and np.allclose(a[:, 1, 0], 1 + x)
    assert np.allclose(parse_alpha("sin(pi*x)")(x, y), np.sin(np.pi * x))


def test_convergence_gate(tmp_path, capsys):
    assert run("convergence", "--family", "symmetric", "--data", "smooth", "--scheme",
               "semidiscrete", "--assert-rate", 1.9, "--out", tmp_path) == 0
    assert (tmp_path / "convergence.csv").read_text().startswith("family,scheme,N,h,k,t,")
    assert run("convergence", "--sweep", "8,16,32", "--assert-rate", 2.5, "--out", tmp_path) == 1
    assert "rate check failed" in capsys.readouterr().err


def test_convergence_records_failed_rows(tmp_path, capsys):
    assert run("convergence", "--family", "stripes", "--sweep", "6,8,16", "--out", tmp_path) == 1
    assert "N=6 failed" in capsys.readouterr().err


def test_k_sweep(tmp_path):
    assert run("convergence", "--sweep-kind", "k", "--scheme", "cn", "--n", 16, "--t", 0.5,
               "--ks", "1/10,1/20,1/40,1/80", "--assert-rate", 1.7, "--out", tmp_path) == 0


def test_probe_gate(tmp_path):
    assert run("probe", "--family", "stripes", "--t", 0.1, "--assert-rate-max", 1.25,
               "--out", tmp_path) == 0
    doc = json.loads((tmp_path / "probe.json").read_text())
    assert [r["N"] for r in doc["rows"]] == [16, 32, 64, 128]


def test_qnorm_gate(tmp_path):
    assert run("qnorm", "--family", "symmetric", "--assert-rate", 1.9, "--out", tmp_path) == 0


def test_config_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("convergence", "--family", "almost", "--seed", 5, "--sweep", "8,16,32", "--out", a)
    cfg = read_config(a / "convergence.config")
    assert cfg["seed"] == 5 and cfg["sweep"] == [8, 16, 32]
    run("convergence", "--config", a / "convergence.config", "--out", b)
    assert (a / "convergence.csv").read_bytes() == (b / "convergence.csv").read_bytes()
    assert (a / "convergence.json").read_bytes() == (b / "convergence.json").read_bytes()
    # flags override file values
    run("convergence", "--config", a / "convergence.config", "--sweep", "8,16", "--out", b)
    assert len((b / "convergence.csv").read_text().splitlines()) == 3


def test_config_for_other_command(tmp_path):
    run("qnorm", "--sweep", "8,16", "--out", tmp_path)
    with pytest.raises(SystemExit):
        run("probe", "--config", tmp_path / "qnorm.config", "--out", tmp_path)


def test_timing_flag(tmp_path):
    run("qnorm", "--sweep", "8,16", "--timing", "--out", tmp_path)
    last = (tmp_path / "qnorm.csv").read_text().splitlines()[-1]
    assert float(last.rsplit(",", 1)[1]) > 0


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fvheat.cli", "mesh", "--family", "symmetric",
                           "--n", "4", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and "symmetric: 9" in proc.stdout

import json
import os
import subprocess
import sys

import pytest
import yaml

from natmhd.cli import main
from natmhd.config import ConfigError, load_config, number, parse_config

SMALL = """
family: sol13
grid:
  t: {range: [0, 1], count: 4}
  xi1: {range: [0, 2*pi], count: 5}
  xi2: {range: [0, 2*pi], count: 5}
  xi3: {range: [0.5, 1], count: 4}
checks: [incompressible, eulerian, cauchy, wave]
mesh: {t0: 0, fix: xi3=1, xi1: [0, 2*pi, 24], free: [0, 2*pi, 12]}
line: {t0: 0, xi2: 0, xi3: 1, xi1: [0, 2*pi], n: 65}
seed: 7
"""

CIRCULAR = """
initial:
  B0: "-y, x, 0"
  box: {x: [-2, 2], y: [-2, 2], z: [-1, 1]}
  seed: "xi2, 0, xi3"
  grid: {xi1: [0, 2*pi, 129], xi2: [0.5, 1.5, 9], xi3: [-0.5, 0.5, 9]}
  f: "-xi2"
line: {xi1: [0, 2*pi], n: 129}
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "small.yaml").write_text(SMALL)
    (tmp_path / "circular.yaml").write_text(CIRCULAR)
    return tmp_path


def test_verify_passes(workdir, capsys):
    assert main(["verify", "small.yaml"]) == 0
    rep = json.loads((workdir / "small.verify.json").read_text())
    assert rep["passed"] is True
    assert rep["checks"]["incompressible"]["max_residual"] <= 1e-6
    man = json.loads((workdir / "manifest.json").read_text())
    assert [e["path"] for e in man["outputs"]] == ["small.verify.json"]
    assert "[PASS]" in capsys.readouterr().out


def test_verify_perturbed_fails(workdir):
    assert main(["verify", "small.yaml", "--perturb", "0.01", "--report", "p.json"]) == 1
    assert json.loads((workdir / "p.json").read_text())["passed"] is False


def test_verify_unknown_key(workdir, capsys):
    (workdir / "bad.yaml").write_text(SMALL + "colour: blue\n")
    assert main(["verify", "bad.yaml"]) == 2
    assert "colour" in capsys.readouterr().err


def test_verify_bad_expression(workdir, capsys):
    (workdir / "bad.yaml").write_text(SMALL + "params: {u: 'sin('}\n")
    assert main(["verify", "bad.yaml"]) == 2


def test_missing_file(workdir):
    assert main(["verify", "nope.yaml"]) == 3


def test_tol_override(workdir):
    assert main(["verify", "small.yaml", "--tol", "cauchy=1e-30", "--report", "t.json"]) == 1
    assert main(["verify", "small.yaml", "--tol", "cauchy"]) == 2


def test_classify(workdir):
    assert main(["classify", "--row", "2", "--k", "1", "--seed", "7", "--report", "c.json"]) == 0
    assert json.loads((workdir / "c.json").read_text())["passed"] is True
    assert main(["classify", "--row", "9", "--seed", "7"]) == 0
    assert main(["classify", "--row", "12"]) == 2


def test_mesh(workdir):
    assert main(["mesh", "small.yaml", "--fix", "xi3=1", "--out", "torus.obj"]) == 0
    text = (workdir / "torus.obj").read_text()
    assert sum(line.startswith("v ") for line in text.splitlines()) == 24 * 12
    info = json.loads((workdir / "torus.mesh.json").read_text())
    assert info["watertight"] is True


def test_mesh_bad_fix(workdir):
    assert main(["mesh", "small.yaml", "--fix", "xi9=1"]) == 2


def test_trace_circle(workdir):
    assert main(["trace", "circular.yaml", "--start", "1,0,0", "--out", "c.csv"]) == 0
    lines = (workdir / "c.csv").read_text().splitlines()
    assert lines[0] == "s,x,y,z" and len(lines) == 130
    info = json.loads((workdir / "c.trace.json").read_text())
    assert info["closed"] is True


def test_generate_initial(workdir):
    assert main(["generate", "circular.yaml"]) == 0
    assert (workdir / "circular.initial.grid").exists()
    assert json.loads((workdir / "circular.initial.json").read_text())["passed"] is True


def test_transform_pipe_to_verify(workdir):
    out = subprocess.run([sys.executable, "-m", "natmhd", "transform", "small.yaml", "--galilean", "t^2,0,0"],
                         capture_output=True, text=True, check=True)
    cfg = yaml.safe_load(out.stdout)
    assert cfg["transforms"][-1]["type"] == "galilean"
    res = subprocess.run([sys.executable, "-m", "natmhd", "verify", "-"], input=out.stdout,
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stdout + res.stderr
    assert "[SKIP] wave" in res.stdout


def test_determinism(workdir):
    for d in ("a", "b"):
        assert main(["verify", "small.yaml", "--report", f"{d}/r.json"]) == 0
        assert main(["mesh", "small.yaml", "--out", f"{d}/m.obj"]) == 0
    for name in ("r.json", "m.obj", "m.mesh.json"):
        assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes()


def test_no_subcommand(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_config_numbers():
    assert number("2*pi", "k") == pytest.approx(6.283185307179586)
    with pytest.raises(ConfigError):
        number("x + 1", "k")
    with pytest.raises(ConfigError):
        number(True, "k")


def test_config_unknown_family():
    with pytest.raises(ConfigError, match="family"):
        parse_config({"family": "sol99"})


def test_config_round_trip(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(SMALL)
    cfg = load_config(str(p))
    assert cfg.family == "sol13" and cfg.grid.counts == (4, 5, 5, 4)
    assert cfg.seed == 7

import csv
from pathlib import Path

import pytest

from depcag import cli
from depcag.config import ConfigError, load_config, parse_config
from depcag.model import builtin
from depcag.solver import integrate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

LINEAR = """
[problem]
r = "1"
f = "2*x"
p = "2"
phi = "u"
tau = 0
{extra_problem}
[schedule]
kind = "uniform"
m = 1
alpha = {alpha}

[initial]
{x0}
v0 = 0

[simulation]
horizon = 12
{extra_sim}
"""


def write(tmp_path, name="run.toml", x0="x0 = 1", alpha=0, extra_problem="", extra_sim="", text=None):
    path = tmp_path / name
    path.write_text(text if text is not None else LINEAR.format(
        x0=x0, alpha=alpha, extra_problem=extra_problem, extra_sim=extra_sim))
    return str(path)


def test_demo_example1(capsys):
    assert cli.run(["demo", "example1"]) == 0
    out = capsys.readouterr().out
    rows = [line.split() for line in out.splitlines() if line.strip()[:2].strip().isdigit()]
    xs = [float(r[2]) for r in rows if len(r) >= 3][:8]
    assert xs == [1, 0, -2, -2, 2, 6, 2, -10]
    assert "Theorem 1: Oscillatory" in out
    assert "classification: Oscillatory" in out


def test_check_example2(capsys, tmp_path):
    code = cli.run(["check", "--config", str(CONFIGS / "example2.toml"), "--theorem", "1",
                    "--out-dir", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "Theorem 1: Oscillatory" in out
    machine = (tmp_path / "verdict.txt").read_text().split("[machine]")[1].split()
    assert {"Eq6=Diverges", "Eq11=Diverges", "conclusion=Oscillatory"} <= set(machine)


def test_missing_x0_exit_1(capsys, tmp_path):
    assert cli.run(["simulate", "--config", write(tmp_path, x0="")]) == 1
    assert "initial.x0" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    assert cli.run(["simulate"]) == 1
    assert cli.run(["simulate", "--builtin", "example1", "--bogus"]) == 1
    assert cli.run(["frobnicate"]) == 1
    assert cli.run(["simulate", "--config", str(tmp_path / "nope.toml")]) == 1


def test_strict_config(tmp_path):
    with pytest.raises(ConfigError, match="unknown key simulation.quad_tolerance"):
        load_config(write(tmp_path, extra_sim="quad_tolerance = 1e-8"))
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config({"plot": {}})
    with pytest.raises(ConfigError, match="must be"):
        parse_config({"initial": {"x0": "one"}})
    with pytest.raises(ConfigError, match="must be"):
        parse_config({"simulation": {"max_iter": True}})


def test_validation_failure_exit_2(tmp_path):
    path = write(tmp_path, extra_problem="")
    text = Path(path).read_text().replace('f = "2*x"', 'f = "-x"')
    bad = write(tmp_path, "bad.toml", text=text)
    assert cli.run(["validate", "--config", bad]) == 2
    assert cli.run(["simulate", "--config", bad]) == 2
    assert cli.run(["simulate", "--config", bad, "--no-validate"]) == 0


def test_numerical_failure_exit_3(tmp_path):
    text = LINEAR.format(x0="x0 = 3", alpha=1, extra_problem="", extra_sim="max_iter = 3")
    text = text.replace('f = "2*x"', 'f = "x+5*x^3"').replace('p = "2"', 'p = "1"').replace("m = 1", "m = 2")
    assert cli.run(["simulate", "--config", write(tmp_path, text=text)]) == 3


def test_invariant_breach_exit_4(monkeypatch):
    def breach(traj):
        raise cli.InvariantError("forced")

    monkeypatch.setattr(cli, "assert_invariants", breach)
    assert cli.run(["simulate", "--builtin", "example1"]) == 4


def test_outputs_byte_identical(tmp_path):
    cfg = str(CONFIGS / "criterion2-demo.toml")
    for d in ("a", "b"):
        assert cli.run(["classify", "--config", cfg, "--horizon", "30", "--out-dir", str(tmp_path / d)]) == 0
    for name in ("trajectory.csv", "nodes.csv", "verdict.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_round_trip(tmp_path):
    assert cli.run(["simulate", "--builtin", "criterion2-demo", "--horizon", "20",
                    "--out-dir", str(tmp_path)]) == 0
    spec, ic = builtin("criterion2-demo")
    traj = integrate(spec, ic, 20)
    with (tmp_path / "trajectory.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["t", "x", "dx", "interval", "gamma"]
    assert [float(r["x"]) for r in rows] == list(traj.dense.x)
    assert [float(r["dx"]) for r in rows] == list(traj.dense.v)
    assert [float(r["t"]) for r in rows] == list(traj.dense.t)
    with (tmp_path / "nodes.csv").open() as fh:
        nodes = list(csv.DictReader(fh))
    assert list(nodes[0]) == ["k", "t_k", "zeta_k", "x", "dx", "x_zeta", "fp_iters"]
    assert [float(r["x_zeta"]) for r in nodes] == [n.x_at_zeta for n in traj.nodes]


def test_sweep_ordered_and_deterministic(tmp_path):
    args = ["classify", "--builtin", "example1", "--horizon", "12", "--sweep", "0.5:1.5:3,-1:1:2",
            "--workers", "2"]
    assert cli.run(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli.run(args + ["--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "sweep.csv").read_text()
    assert a == (tmp_path / "b" / "sweep.csv").read_text()
    rows = list(csv.DictReader(a.splitlines()))
    assert [int(r["index"]) for r in rows] == list(range(6))
    assert all(r["classification"] == "Oscillatory" for r in rows)
    assert cli.run(["classify", "--builtin", "example1", "--sweep", "garbage"]) == 1


@pytest.mark.parametrize("name", ["example1", "example2", "criterion2-demo"])
def test_demo_runs(name, capsys):
    assert cli.run(["demo", name]) == 0
    assert "Theorem" in capsys.readouterr().out


def test_configs_load():
    for path in CONFIGS.glob("*.toml"):
        cfg = load_config(path)
        cfg.problem(), cfg.initial(), cfg.solver_options(), cfg.criteria_options()

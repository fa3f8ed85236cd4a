import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aronsson_lab.cli import main, probe_nodes, run
from aronsson_lab.grid import Grid2D, field_from_csv, field_to_csv
from aronsson_lab.scenario import SUITES, ConfigError, Scenario, parse_config

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
MINIMAL = {"domain": [0, 1, 0, 1], "n": 17, "boundary": {"preset": "constant", "value": 1.0}}


def _cfg(**over):
    d = json.loads(json.dumps(MINIMAL))
    d.update(over)
    return json.dumps(d)


def test_minimal_defaults():
    sc = parse_config(_cfg())
    assert sc.ratio == 0.5 and sc.grad_tol == 1e-8 and sc.count == 5
    assert sc.active_suites() == tuple(s for s in SUITES if s != "flatness")
    assert sc.coefficient_field().L == 1


def test_unknown_key_named():
    with pytest.raises(ConfigError) as exc:
        parse_config(_cfg(epsilonn=0.1))
    assert exc.value.where == "epsilonn"
    with pytest.raises(ConfigError, match="boundary.lamda"):
        parse_config(_cfg(boundary={"preset": "flat", "lamda": 0.1}))


@pytest.mark.parametrize("over,where", [
    ({"n": 9}, "n"),
    ({"n": 17.5}, "n"),
    ({"boundary": {"preset": "wavy"}}, "boundary.preset"),
    ({"coefficients": {"preset": "constant", "params": [1, 2, 1]}}, "coefficients"),
    ({"coefficients": {"preset": "smooth", "params": ["x"]}}, "coefficients.params[0]"),
    ({"eps_schedule": {"ratio": 1.5}}, "eps_schedule"),
    ({"suites": ["barrier", "nope"]}, "suites[1]"),
    ({"domain": [0, 1, 1, 0]}, "domain"),
])
def test_invalid_values_located(over, where):
    with pytest.raises(ConfigError) as exc:
        parse_config(_cfg(**over))
    assert exc.value.where == where


def test_missing_key_and_syntax_error():
    with pytest.raises(ConfigError, match="boundary"):
        parse_config('{"domain": [0, 1, 0, 1], "n": 17}')
    with pytest.raises(ConfigError) as exc:
        parse_config('{"n": 17,\n "domain": [0, 1, 0, 1],\n}')
    assert exc.value.where.startswith("line 3")


def test_aronsson_boundary_data():
    sc = parse_config((SCENARIOS / "aronsson.json").read_text())
    g = sc.grid()
    data = sc.boundary_data(g).values
    X, Y = g.mesh()
    b = g.boundary_mask
    assert np.abs(data[b] - (X[b] ** (4 / 3) - Y[b] ** (4 / 3))).max() <= 1e-15


@given(st.integers(0, 1000), st.floats(0.01, 0.2))
def test_flat_data_within_half_lambda(seed, lam):
    sc = parse_config(_cfg(domain=[-3, 3, -3, 3], boundary={"preset": "flat", "lambda": lam, "seed": seed}))
    g = sc.grid()
    dev = np.abs(sc.boundary_data(g).values - g.points[..., 1])
    assert dev.max() <= 0.5 * lam + 1e-15


def test_hash_ignores_output():
    a = parse_config(_cfg(output="/tmp/a"))
    b = parse_config(_cfg(output="/tmp/b"))
    c = parse_config(_cfg(seed=3))
    assert a.hash() == b.hash() != c.hash()


def test_probe_nodes_deterministic():
    g = Grid2D.from_box(0, 1, 0, 1, 33)
    p = probe_nodes(g, 5, 0)
    assert p == probe_nodes(g, 5, 0) and p[0] == (16, 16) and len(set(p)) == 5
    assert all(8 <= i <= 24 and 8 <= j <= 24 for i, j in p)


@pytest.fixture(scope="module")
def affine_runs(tmp_path_factory):
    sc = parse_config((SCENARIOS / "affine.json").read_text())
    outs = [tmp_path_factory.mktemp(f"affine{k}") for k in range(2)]
    return sc, outs, [run(sc, o) for o in outs]


def test_affine_scenario_exit_zero(affine_runs):
    _, _, results = affine_runs
    code, summary = results[0]
    assert code == 0
    assert all(c["pass"] for c in summary["checks"])


def test_summary_deterministic(affine_runs):
    _, outs, _ = affine_runs
    a, b = (json.loads((o / "summary.json").read_text()) for o in outs)
    a.pop("timings"), b.pop("timings")
    assert a == b


def test_written_csvs_round_trip(affine_runs):
    sc, outs, _ = affine_runs
    for path in sorted(outs[0].glob("u_eps_*.csv")):
        text = path.read_text()
        f = field_from_csv(text)
        assert f.grid.shape == (sc.n, sc.n)
        assert field_to_csv(f) == text
    reports = list((outs[0] / "checks").glob("*.json"))
    for r in reports:
        assert set(json.loads(r.read_text())) == {"name", "hypothesis_flags", "measured", "threshold", "pass"}
    solve = json.loads((outs[0] / "solve_00.json").read_text())
    assert set(solve) == {"eps", "iters", "energy_scale", "energy_mantissa", "grad_norm", "residual_sup", "wall_time"}


def test_strong_anisotropy_exit_two(tmp_path, capsys):
    code = main(["run", str(SCENARIOS / "strong_anisotropy.json"), "--out", str(tmp_path),
                 "--suite", "max_principle,barrier"])
    assert code == 2
    rep = json.loads((tmp_path / "checks" / "barrier_supersolution.json").read_text())
    assert rep["pass"] is None and rep["hypothesis_flags"]["gamma_tilde_positive"] is False


def test_unparseable_config_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 33,')
    assert main(["run", str(bad), "--out", str(tmp_path / "out")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError"
    assert json.loads((tmp_path / "out" / "error.json").read_text()) == err


def test_unknown_suite_exit_one(tmp_path, capsys):
    assert main(["run", str(SCENARIOS / "constant.json"), "--suite", "bogus"]) == 1


def test_check_subcommand(capsys):
    assert main(["check", str(SCENARIOS / "aronsson.json")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["scenario"]["domain"] == [1.0, 2.0, 1.0, 2.0] and len(out["scenario_hash"]) == 64


def test_module_entry_point_with_thread_variable(tmp_path):
    env = {**os.environ, "ARONSSON_LAB_THREADS": "1"}
    proc = subprocess.run([sys.executable, "-m", "aronsson_lab", "run", str(SCENARIOS / "constant.json"),
                           "--out", str(tmp_path), "--suite", "max_principle"],
                          capture_output=True, text=True, env=env, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["exit"] == 0


@pytest.mark.parametrize("name,expected", [
    ("affine", 0), ("aronsson", 0), ("constant", 0), ("flat_0.1", 0), ("strong_anisotropy", 2),
])
def test_shipped_scenarios(name, expected, tmp_path):
    sc = parse_config((SCENARIOS / f"{name}.json").read_text())
    code, _ = run(sc, tmp_path)
    assert code == expected

import json
import subprocess
import sys

import numpy as np
import pytest

from gfne.cli import compare_files, main, read_trajectory, write_trajectory
from gfne.scenario import bundled_path


def scalar_doc(rows=None):
    player = {"Q": [[1]], "R": [[1]]}
    if rows is not None:
        player.update(Gx=[[0]] * len(rows), Gu=[[r[0]] for r in rows], g=[r[1] for r in rows])
    return {
        "dims": {"n": 1, "T": 1, "N": 1, "m": [1]},
        "model": {"family": "custom-lq"},
        "coefficients": {"default": {"A": [[1]], "B": [[1]], "players": [player]},
                         "terminal": {"players": [{"Q": [[1]]}]}},
        "x1": [2.0],
    }


def write(tmp_path, doc, name="game.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=2))
    return p


def solve(*args):
    return main(["solve", *map(str, args)])


def test_scalar_equality_game(tmp_path):
    out = tmp_path / "out"
    assert solve("--scenario", bundled_path("scalar_lq"), "--solver", "eq-lq", "--out", out) == 0
    head, data = read_trajectory(out / "trajectory.csv")
    assert head == ["stage", "x1", "u1_1"]
    assert data[0, 2] == pytest.approx(-1.0, abs=1e-12)     # u = -x1/2
    assert data[1, 1] == pytest.approx(1.0, abs=1e-12)
    assert np.isnan(data[1, 2])
    for f in ("iterations.txt", "residuals.txt", "sufficiency.txt"):
        assert (out / f).exists()
    assert "satisfied" in (out / "sufficiency.txt").read_text()


def test_inequality_solver_on_bounded_game(tmp_path):
    out = tmp_path / "out"
    path = write(tmp_path, scalar_doc(rows=[(1.0, 0.5)]))     # u >= -0.5 binds
    assert solve("--scenario", path, "--solver", "ineq-lq", "--out", out) == 0
    _, data = read_trajectory(out / "trajectory.csv")
    assert data[0, 2] == pytest.approx(-0.5, abs=1e-12)
    assert "(1,1)" in (out / "iterations.txt").read_text()


def test_equality_solver_rejects_inequality_rows(tmp_path, capsys):
    path = write(tmp_path, scalar_doc(rows=[(1.0, 0.5)]))
    assert solve("--scenario", path, "--solver", "eq-lq", "--out", tmp_path / "o") == 2
    assert "ineq-lq" in capsys.readouterr().err
    assert solve("--scenario", bundled_path("lane_change"), "--solver", "eq-lq", "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()


def test_invalid_scenario_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"dims\": 3,\n")
    assert solve("--scenario", bad, "--solver", "gfqne", "--out", tmp_path / "o") == 2
    assert "bad.json:" in capsys.readouterr().err


def test_bad_option_exits_2(tmp_path):
    assert solve("--scenario", bundled_path("scalar_lq"), "--solver", "eq-lq", "--tol", "-1",
                 "--out", tmp_path / "o") == 2


def test_infeasible_game_leaves_failure_marker(tmp_path, capsys):
    out = tmp_path / "out"
    path = write(tmp_path, scalar_doc(rows=[(1.0, -1.0), (-1.0, 0.0)]))   # u >= 1 and u <= 0
    assert solve("--scenario", path, "--solver", "ineq-lq", "--out", out) == 1
    assert "InfeasibleGame" in (out / "FAILED").read_text()
    assert "solver failed" in capsys.readouterr().err


def test_failure_marker_cleared_on_success(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "FAILED").write_text("old\n")
    assert solve("--scenario", bundled_path("scalar_lq"), "--solver", "eq-lq", "--out", out) == 0
    assert not (out / "FAILED").exists()


def test_compare(tmp_path, capsys):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    xs, us = [np.array([1.0, 2.0]), np.array([0.5, 0.25])], [np.array([0.1, -0.2])]
    write_trajectory(a, xs, us, [1, 1])
    write_trajectory(b, xs, us, [1, 1])
    assert main(["compare", str(a), str(b)]) == 0
    assert all(v == 0.0 for v in compare_files(a, b).values())
    write_trajectory(b, xs, [us[0] + 1e-3], [1, 1])
    assert main(["compare", str(a), str(b)]) == 1
    assert compare_files(a, b)["u2_1"] == pytest.approx(1e-3)
    write_trajectory(c, xs, [np.array([0.1])], [1])
    assert main(["compare", str(a), str(c)]) == 2
    assert "mismatch" in capsys.readouterr().err


@pytest.mark.slow
def test_driving_scenario_outputs(tmp_path):
    out = tmp_path / "out"
    assert solve("--scenario", bundled_path("lane_change"), "--solver", "gfqne", "--tol", "1e-4",
                 "--snapshots", "--out", out) == 0
    text = (out / "iterations.txt").read_text()
    merit = float([s for s in text.splitlines() if s.strip() and s.split()[0].isdigit()][-1].split()[-1])
    assert merit < 1e-4
    head, data = read_trajectory(out / "trajectory.csv")
    assert data.shape == (101, 1 + 12 + 6)
    for v in (1, 2, 3):
        h, d = read_trajectory(out / f"vehicle_{v}.csv")
        assert h == ["stage", "longitudinal", "lateral"] and d.shape == (101, 3)
    assert (out / "vehicles.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    snaps = sorted(p.name for p in (out / "snapshots").iterdir())
    assert snaps[0] == "iter_001.csv" and len(snaps) >= 2


def test_console_script_entry(tmp_path):
    out = tmp_path / "out"
    r = subprocess.run([sys.executable, "-m", "gfne.cli", "solve", "--scenario", str(bundled_path("scalar_lq")),
                        "--solver", "eq-lq", "--out", str(out)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (out / "trajectory.csv").exists()

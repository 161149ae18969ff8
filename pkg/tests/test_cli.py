import json
import math
import subprocess
import sys

import numpy as np
import pytest

from ballmedium import IncidentWave
from ballmedium.cli import default_probes, main
from ballmedium.core import Domain
from ballmedium.io import read_csv, read_field_csv

FOUR_PI = 4 * math.pi


def run(tmp_path, command, config, *extra, name="run.json"):
    path = tmp_path / name
    path.write_text(config if isinstance(config, str) else json.dumps(config))
    out = tmp_path / f"out-{command}"
    code = main([command, "--config", str(path), "--out", str(out), *extra])
    return code, out


def load(path):
    return json.loads(path.read_text())


# --------------------------------------------------------------- design
def test_design_writes_recipe(tmp_path):
    cfg = {"n_squared": 2.0, "n0_squared": 1.0, "strategy": "fixed-N(0.5)", "grid": 6}
    code, out = run(tmp_path, "design", cfg)
    assert code == 0
    data = load(out / "design.json")
    assert data["design"]["nu_squared"]["value"] == 2.0
    assert data["command"] == "design" and data["config"]["strategy"] == "fixed-N(0.5)"
    diag = load(out / "diagnostics.json")
    assert diag["passed"] and diag["identity_error"] == 0.0


def test_design_nu2_value(tmp_path):
    from ballmedium.designer import DesignResult

    cfg = {"n_squared": 2.0, "strategy": "fixed-N(0.5)", "grid": 6}
    _, out = run(tmp_path, "design", cfg)
    result = DesignResult.from_dict(load(out / "design.json")["design"])
    assert result.nu_squared([[0.5, 0.5, 0.5]])[0] == 2.0


def test_design_zero_contrast(tmp_path):
    bump = {"bump": {"center": [0.5, 0.5, 0.5], "radius": 0.4, "amplitude": 0.3, "base": 1.0}}
    cfg = {"n_squared": bump, "n0_squared": bump, "strategy": "fixed-N(0.1)", "grid": 6}
    code, out = run(tmp_path, "design", cfg)
    assert code == 0
    assert all(d["passed"] for d in load(out / "diagnostics.json")["diagnostics"])


def test_design_packing_failure(tmp_path):
    cfg = {"n_squared": 2.0, "strategy": "fixed-N(0.6)", "grid": 6}
    code, out = run(tmp_path, "design", cfg)
    assert code == 4
    diag = load(out / "diagnostics.json")
    failed = [d for d in diag["diagnostics"] if not d["passed"]]
    assert [d["check"] for d in failed] == ["packing"]
    assert failed[0]["value"] == pytest.approx(0.6)


def test_malformed_config(tmp_path, capsys):
    code, _ = run(tmp_path, "design", '{"n_squared": 2.0,\n "strategy": }')
    assert code == 2
    assert "line 2" in capsys.readouterr().err
    code, _ = run(tmp_path, "design", {"n_squared": 2.0})
    assert code == 2
    assert "strategy" in capsys.readouterr().err
    code, _ = run(tmp_path, "design", {"n_squared": 2.0, "strategy": "fixed-N(0.1)", "domain": {"lo": [0, 0, 0], "hi": [1, -1, 1]}})
    assert code == 2
    assert "domain" in capsys.readouterr().err
    code, _ = run(tmp_path, "effective", {"design": str(tmp_path / "missing.json")})
    assert code == 2


def test_missing_config_file(tmp_path):
    assert main(["design", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"n_squared": 2.0, "strategy": "fixed-N(0.6)", "grid": 4}))
    proc = subprocess.run([sys.executable, "-m", "ballmedium", "design", "--config", str(path), "--out", str(tmp_path)], capture_output=True)
    assert proc.returncode == 4


# ------------------------------------------------------------ effective
def test_effective_zero_contrast_is_plane_wave(tmp_path):
    cfg = {"density": 0.0, "nu_squared": 1.0, "grid": 6, "wave": {"k": 2.0, "alpha": [0.6, 0.8, 0.0]}}
    code, out = run(tmp_path, "effective", cfg)
    assert code == 0
    header, pts, vals = read_field_csv(out / "u_e.csv")
    assert header["command"] == "effective"
    assert np.array_equal(vals, IncidentWave(2.0, (0.6, 0.8, 0.0))(pts))


def test_effective_from_design_file(tmp_path):
    _, out = run(tmp_path, "design", {"n_squared": 1.2, "strategy": "fixed-N(0.1)", "grid": 6})
    code, out2 = run(tmp_path, "effective", {"design": str(out / "design.json"), "grid": 6}, name="eff.json")
    assert code == 0
    summary = load(out2 / "residual.json")
    assert summary["density_source"] == {"source": "design-file"}
    assert summary["field"]["report"]["method"] == "dense-lu"


def test_effective_refinement_ratio(tmp_path):
    bump = {"bump": {"center": [0.5, 0.5, 0.5], "radius": 0.45, "amplitude": 0.3, "base": 0.0}}
    cfg = {"density": bump, "nu_squared": 1.0, "grid": 8, "effective": {"residual_grids": [8, 16]}}
    code, out = run(tmp_path, "effective", cfg)
    assert code == 0
    summary = load(out / "residual.json")
    assert [r["grid"] for r in summary["refinement"]] == [[8, 8, 8], [16, 16, 16]]
    assert summary["ratios"][0] >= 3


def test_effective_born_check(tmp_path):
    cfg = {"density": 1.0, "nu_squared": 1e-3, "grid": 8, "effective": {"born_check": True}}
    code, out = run(tmp_path, "effective", cfg)
    assert code == 0
    assert load(out / "residual.json")["born_deviation"] <= 0.05


def test_born_check_needs_free_background(tmp_path):
    cfg = {"density": 1.0, "nu_squared": 1e-3, "n0_squared": 1.1, "grid": 6, "effective": {"born_check": True}}
    assert run(tmp_path, "effective", cfg)[0] == 2


def test_effective_solver_failure(tmp_path):
    cfg = {"density": 0.5, "nu_squared": 80.0, "grid": 6, "solver": {"dense_limit": 0, "max_iter": 2}}
    assert run(tmp_path, "effective", cfg)[0] == 3


# ---------------------------------------------------------- probe-greens
def test_probe_greens_free_space(tmp_path):
    code, out = run(tmp_path, "probe-greens", {"grid": 6, "greens": {"distance": 0.05}})
    assert code == 0
    data = load(out / "greens_diag.json")
    row = data["rows"][0]
    assert row["report"]["method"] == "identity"
    assert row["sup_norm"] == pytest.approx(1 / FOUR_PI, rel=1e-14)
    # Richardson on e^{ikd} leaves an O((kd)^3) imaginary remainder
    assert row["limit_deviation"] <= 1e-5
    assert data["reference"] == pytest.approx(1 / FOUR_PI)


def test_probe_greens_bump(tmp_path):
    bump = {"bump": {"center": [0.5, 0.5, 0.5], "radius": 0.45, "amplitude": 0.3, "base": 1.0}}
    cfg = {"n0_squared": bump, "greens": {"grids": [6, 8], "distance": 0.05, "samples": 100}}
    code, out = run(tmp_path, "probe-greens", cfg)
    assert code == 0
    data = load(out / "greens_diag.json")
    assert data["limit_deviation"] <= 0.02
    assert data["sup_norm_spread"] <= 0.05


# ------------------------------------------------------------- converge
def converge_config(**over):
    cfg = {"density": 0.05, "nu_squared": 1.0, "grid": 6, "radii": [0.1, 0.07, 0.05], "seed": 3}
    cfg.update(over)
    return cfg


def test_converge_rows(tmp_path):
    code, out = run(tmp_path, "converge", converge_config())
    assert code == 0
    header, cols, rows = read_csv(out / "convergence.csv")
    assert cols == ["a", "M", "status", "error"]
    assert header["config"]["seed"] == 3
    assert len(header["config"]["probes"]) == 8
    assert [float(r[0]) for r in rows] == [0.1, 0.07, 0.05]
    assert all(r[2] == "ok" and float(r[3]) >= 0 for r in rows)
    v_a = lambda a: 4 * math.pi * a**3 / 3
    assert [int(r[1]) for r in rows] == [pytest.approx(0.05 / v_a(a), abs=1) for a in (0.1, 0.07, 0.05)]
    report = load(out / "report.json")
    assert report["successful_rows"] == 3
    assert all("t_solve" in r for r in report["rows"])


def test_converge_zero_contrast(tmp_path):
    code, out = run(tmp_path, "converge", converge_config(nu_squared=0.0))
    assert code == 0
    _, _, rows = read_csv(out / "convergence.csv")
    assert [float(r[3]) for r in rows] == [0.0, 0.0, 0.0]


def test_converge_failed_row_continues(tmp_path):
    # N = 0.5 fits at a = 0.1 and 0.05 but not at a = 0.09
    code, out = run(tmp_path, "converge", converge_config(density=0.5, radii=[0.1, 0.09, 0.05]))
    assert code == 0
    _, _, rows = read_csv(out / "convergence.csv")
    assert [r[2] for r in rows] == ["ok", "failed", "ok"]
    assert rows[1][3] == ""
    report = load(out / "report.json")
    assert report["successful_rows"] == 2
    assert report["monotone_decreasing"] is False
    assert "fits" in report["rows"][1]["reason"]


@pytest.mark.parametrize("radii", [[0.1, 0.05], [0.1, 0.1, 0.05], [0.05, 0.07, 0.1]])
def test_converge_rejects_bad_schedules(tmp_path, radii):
    assert run(tmp_path, "converge", converge_config(radii=radii))[0] == 2


def test_converge_reproducible(tmp_path):
    cfg = converge_config()
    _, a = run(tmp_path, "converge", cfg)
    first = (a / "convergence.csv").read_bytes()
    _, b = run(tmp_path, "converge", cfg, "--threads", "1")
    assert (b / "convergence.csv").read_bytes() == first
    _, c = run(tmp_path, "converge", cfg, "--seed", "4")
    assert (c / "convergence.csv").read_bytes() != first


def test_default_probes_lie_outside():
    d = Domain.unit_cube()
    probes = default_probes(d)
    assert probes.shape == (8, 3)
    assert not np.any(d.contains(probes))

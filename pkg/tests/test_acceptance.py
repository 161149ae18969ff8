"""Acceptance criteria, one test each.  Run with ``pytest tests/test_acceptance.py``."""

import json
import math
import time

import numpy as np
import pytest

from ballmedium import (
    BallConfig,
    Bump,
    Constant,
    DensityProfile,
    Grid,
    IncidentWave,
    Piecewise,
    Ball,
    Box,
    RefractionProfile,
    assemble_foldy,
    ball_potential,
    ball_self_integral,
    design,
    greens_function,
    helmholtz_residual,
    place_balls,
    riemann_sum,
    solve_background,
    solve_discrete,
    solve_effective,
    verify_design,
    weighted_sup_norm,
)
from ballmedium.cli import main
from ballmedium.io import read_csv
from ballmedium.solvers import BackgroundMedium, FreeSpaceMedium, extrapolate_diagonal, volume_potential

FOUR_PI = 4 * math.pi
CENTER = (0.5, 0.5, 0.5)


def rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b)))


def test_homogeneous_reduction(cube, criterion):
    grid = Grid(cube, (12, 12, 12))
    t0 = time.perf_counter()
    medium = BackgroundMedium(RefractionProfile.constant(1.0, cube), 1.0, grid)
    pts = grid.centers
    cells, report = medium.greens_cells(pts)
    elapsed = time.perf_counter() - t0
    r = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    off = ~np.eye(grid.size, dtype=bool)
    g = np.exp(1j * r[off]) / (FOUR_PI * r[off])
    err = float(np.max(np.abs(cells[off] / g - 1)))
    ok = err <= 1e-10 and report.method == "identity"
    criterion(1, "homogeneous Green's reduction", ok, f"max rel error {err:.1e} over {off.sum()} pairs, {elapsed:.1f}s")
    assert ok


def test_ball_potential_exact(criterion, rng):
    worst_join, worst_ext = 0.0, 0.0
    for _ in range(100):
        a = rng.uniform(1e-3, 3.0)
        c = rng.uniform(-2, 2, 3)
        e = rng.standard_normal(3)
        e /= np.linalg.norm(e)
        r_in = np.nextafter(a, 0.0)
        r_out = np.nextafter(a, np.inf)
        inside = ball_potential(c + r_in * e, c, a)
        outside = ball_potential(c + r_out * e, c, a)
        worst_join = max(worst_join, abs(inside - outside), abs(ball_potential(c + a * e, c, a) - 4 * math.pi * a * a / 3))
        r = a * rng.uniform(1.0, 20.0)
        x = c + r * e
        d = np.linalg.norm(x - c)
        worst_ext = max(worst_ext, abs(ball_potential(x, c, a) / (4 * math.pi * a**3 / 3 / d) - 1))
    ok = worst_join <= 1e-12 and worst_ext <= 1e-12
    criterion(2, "ball potential branches", ok, f"boundary gap {worst_join:.1e}, exterior rel error {worst_ext:.1e}")
    assert ok


def test_diagonal_limit(cube, bump_n0, criterion, rng):
    y = np.array(CENTER)
    x = np.vstack([rng.uniform(-0.5, 1.5, size=(200, 3)), y + 0.02 * rng.standard_normal((20, 3))])
    limits, sups = [], []
    for n in (8, 10, 12):
        _, evaluator, _ = greens_function(bump_n0, 1.0, y, Grid(cube, (n, n, n)))
        limit, _ = extrapolate_diagonal(evaluator, y, (1.0, 0.3, 0.2), 0.05)
        limits.append(abs(limit * FOUR_PI - 1))
        sups.append(weighted_sup_norm(x, y, evaluator(x)))
    spread = (max(sups) - min(sups)) / max(sups)
    ok = max(limits) <= 0.02 and spread <= 0.05
    criterion(3, "diagonal limit of |x-y| G", ok,
              f"limit deviation {max(limits):.1e}, sup norm x4pi {[round(s * FOUR_PI, 4) for s in sups]}, spread {spread:.1e}")
    assert ok


def test_riemann_sum_rate(cube, criterion):
    density = DensityProfile(Constant(0.1), cube)
    nu2 = RefractionProfile.constant(1.0, cube)
    errs = [abs(riemann_sum(place_balls(density, nu2, a, cube, seed=0), lambda x: x[:, 0]) - 0.05) for a in (0.04, 0.02, 0.01)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = min(ratios) >= 1.7
    criterion(4, "Riemann-sum convergence (seed 0)", ok,
              f"errors {[f'{e:.2e}' for e in errs]}, ratios {[round(r, 2) for r in ratios]}")
    assert ok


@pytest.mark.slow
def test_many_ball_convergence(tmp_path, criterion):
    config = {
        "density": 0.05, "nu_squared": 1.0, "n0_squared": 1.0,
        "wave": {"k": 1.0, "alpha": [0.0, 0.0, 1.0]},
        "grid": 16, "radii": [0.05, 0.025, 0.0125], "seed": 0,
    }
    path = tmp_path / "converge.json"
    path.write_text(json.dumps(config))
    t0 = time.perf_counter()
    code = main(["converge", "--config", str(path), "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    _, _, rows = read_csv(tmp_path / "convergence.csv")
    errors = [float(r[3]) for r in rows if r[2] == "ok"]
    counts = [int(r[1]) for r in rows]
    ok = code == 0 and len(errors) == 3 and errors[0] > errors[1] > errors[2] and elapsed <= 300
    criterion(5, "many-ball field tends to the effective field", ok,
              f"M {counts}, e(a) {[f'{e:.2e}' for e in errors]}, {elapsed:.0f}s")
    assert ok


def test_residual_rate(cube, wave, criterion):
    cases = {
        "free background": (RefractionProfile.constant(1.0, cube), DensityProfile(Bump(CENTER, 0.45, 0.3, 0.0), cube),
                            RefractionProfile.constant(1.0, cube)),
        "bump background": (RefractionProfile(Bump(CENTER, 0.45, 0.3, 1.0), cube), DensityProfile(Bump(CENTER, 0.4, 0.2, 0.0), cube),
                            RefractionProfile.constant(2.0, cube)),
    }
    ratios = {}
    for name, (n0, density, nu2) in cases.items():
        n2 = RefractionProfile(n0.expr + density.expr * nu2.expr, cube)
        res = []
        for n in (8, 16):
            grid = Grid(cube, (n, n, n))
            eff = solve_effective(solve_background(n0, wave, grid), n0, density, nu2, 1.0, grid)
            res.append(helmholtz_residual(eff.field, n2, 1.0))
        ratios[name] = res[0] / res[1]
    ok = min(ratios.values()) >= 3
    criterion(6, "PDE residual under grid halving", ok, ", ".join(f"{k} ratio {v:.2f}" for k, v in ratios.items()))
    assert ok


def test_design_identity(cube, wave, criterion):
    grid = Grid(cube, (8, 8, 8))
    n0 = RefractionProfile(Bump(CENTER, 0.45, 0.3, 1.0), cube)
    n2 = RefractionProfile(Bump((0.45, 0.5, 0.55), 0.4, 0.8 + 0.1j, 1.0), cube)
    result = design(n2, n0, "fixed-N(0.25)", grid=grid)
    eff = solve_effective(solve_background(n0, wave, grid), n0, result.density, result.nu_squared, 1.0, grid)
    direct = solve_background(n2, wave, grid)
    agree = rel(eff.field.values, direct.field.values)

    pc0 = RefractionProfile(Piecewise([(Box((0, 0, 0), (0.5, 1, 1)), 1.5)], default=1.0), cube)
    pc2 = RefractionProfile(Piecewise([(Ball(CENTER, 0.3), 2.7 + 0.1j), (Box((0, 0, 0), (0.5, 1, 1)), 1.9)], default=1.2), cube)
    identity = 0.0
    for strategy in ("fixed-N(0.3)", "fixed-N(0.05)", "zero-N-where-equal(0.4)"):
        d = design(pc2, pc0, strategy, grid=grid)
        assert d.passed
        identity = max(identity, verify_design(d, pc0, pc2, grid))
    identity = max(identity, verify_design(result, n0, n2, grid))
    ok = agree <= 1e-12 and identity <= 1e-14
    criterion(7, "design identity", ok, f"effective vs direct {agree:.1e}, verify_design max {identity:.1e}")
    assert ok


def test_born_oracle(cube, wave, criterion):
    eps, k = 1e-3, 1.0
    grid = Grid(cube, (8, 8, 8))
    pts = grid.centers
    n0 = RefractionProfile.constant(1.0, cube)
    u0 = solve_background(n0, wave, grid)
    eff = solve_effective(u0, n0, DensityProfile(Constant(1.0), cube), RefractionProfile.constant(eps, cube), k, grid)
    born = u0.field.values + volume_potential(pts, cube, lambda z: k * k * eps * wave(z), k, order=12)
    dev_eff = rel(eff.field.values, born) * np.linalg.norm(born) / np.linalg.norm(born - u0.field.values)
    bg = solve_background(RefractionProfile.constant(1 + eps, cube), wave, grid)
    dev_bg = rel(bg.field.values, born) * np.linalg.norm(born) / np.linalg.norm(born - u0.field.values)
    ok = dev_eff <= 0.05 and dev_bg <= 0.05
    criterion(8, "Born oracle at contrast 1e-3", ok, f"effective {dev_eff:.2e}, background {dev_bg:.2e}")
    assert ok


def test_single_ball(wave, criterion):
    worst = 0.0
    for a, k, n2 in [(0.05, 1.0, 2.0), (0.01, 3.0, 1 + 0.5j), (0.2, 0.5, 4.0), (0.1, 2.0, 0.3j)]:
        x1 = np.array([0.4, 0.5, 0.6])
        w = IncidentWave(k, (0.0, 0.0, 1.0))
        u = solve_discrete(assemble_foldy(BallConfig(a, [x1], [n2]), w, FreeSpaceMedium(k), k))
        s_a = (np.exp(1j * k * a) * (1 - 1j * k * a) - 1) / k**2
        worst = max(worst, abs(u[0] / (w(x1) / (1 - k * k * n2 * s_a)) - 1))
    a = 0.05
    ks = (1e-1, 1e-2, 1e-3, 1e-6)
    # the leading correction is i*2ka/3, so the relative error is O(ka)
    static = [abs(ball_self_integral(a, k) / (a * a / 2) - 1) for k in ks]
    center_gap = abs(ball_potential([0, 0, 0], [0, 0, 0], a) / FOUR_PI - a * a / 2)
    ok = worst <= 1e-12 and all(b < c for c, b in zip(static, static[1:])) and all(e <= k * a for e, k in zip(static, ks)) and center_gap <= 1e-16
    criterion(9, "single-ball closed form", ok, f"max rel error {worst:.1e}, S_a -> a^2/2 errors {[f'{s:.0e}' for s in static]}")
    assert ok


def test_reproducible_converge(tmp_path, criterion):
    config = {"density": 0.05, "nu_squared": 1.0, "grid": 8, "radii": [0.05, 0.035, 0.025], "seed": 7}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    outputs = []
    for name in ("first", "second"):
        assert main(["converge", "--config", str(path), "--out", str(tmp_path / name)]) == 0
        outputs.append((tmp_path / name / "convergence.csv").read_bytes())
    ok = outputs[0] == outputs[1] and len(outputs[0]) > 0
    criterion(10, "reproducible convergence CSV", ok, f"{len(outputs[0])} bytes, identical={outputs[0] == outputs[1]}")
    assert ok

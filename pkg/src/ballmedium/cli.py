"""Command-line front end.

    ballmedium design        --config run.json --out DIR
    ballmedium effective     --config run.json --out DIR
    ballmedium converge      --config run.json --out DIR [--seed S]
    ballmedium probe-greens  --config run.json --out DIR

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 realizability failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import io as bmio
from .core import (
    FOUR_PI,
    DensityProfile,
    Domain,
    Grid,
    IncidentWave,
    RealizabilityError,
    RefractionProfile,
    SolverError,
    expr_from_dict,
)
from .designer import DesignResult, Strategy, design, realizability_check, verify_design
from .particles import assemble_foldy, evaluate_discrete_field, place_balls, solve_discrete
from .solvers import (
    BackgroundMedium,
    FreeSpaceMedium,
    extrapolate_diagonal,
    greens_function,
    helmholtz_residual,
    solve_background,
    solve_effective,
    volume_potential,
    weighted_sup_norm,
)

logger = logging.getLogger("ballmedium")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_REALIZABILITY = 0, 2, 3, 4

DEFAULTS: dict[str, Any] = {
    "domain": {"lo": [0.0, 0.0, 0.0], "hi": [1.0, 1.0, 1.0]},
    "grid": [12, 12, 12],
    "wave": {"k": 1.0, "alpha": [0.0, 0.0, 1.0]},
    "n0_squared": 1.0,
    "seed": 0,
    "solver": {"tol": 1e-10, "max_iter": 500, "dense_limit": 4096},
}


class ConfigError(ValueError):
    """Malformed run configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"config error at '{path}': {message}")
        self.path = path


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
@dataclass
class RunConfig:
    raw: dict
    domain: Domain
    grid: Grid
    wave: IncidentWave
    n0_squared: RefractionProfile
    seed: int
    solver: dict

    def get(self, key: str, default: Any = None) -> Any:
        return self.raw.get(key, default)

    def require(self, key: str) -> Any:
        if key not in self.raw:
            raise ConfigError(key, "required field is missing")
        return self.raw[key]


def _field(raw: dict, path: str, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigError(path, str(exc)) from exc


def load_config(path: str | Path | None = None, text: str | None = None, seed: int | None = None) -> RunConfig:
    if text is None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read: {exc}") from exc
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from exc
    if not isinstance(user, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    return resolve_config(user, seed)


def resolve_config(user: dict, seed: int | None = None) -> RunConfig:
    raw = copy.deepcopy(DEFAULTS)
    for key, value in user.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    if seed is not None:
        raw["seed"] = int(seed)
    domain = _field(raw, "domain", lambda: Domain.from_dict(raw["domain"]))
    grid = _field(raw, "grid", lambda: _grid(domain, raw["grid"]))
    wave = _field(raw, "wave", lambda: IncidentWave.from_dict(raw["wave"]))
    n0 = _field(raw, "n0_squared", lambda: RefractionProfile(expr_from_dict(raw["n0_squared"]), domain))
    seed_value = _field(raw, "seed", lambda: int(raw["seed"]))
    solver = _field(raw, "solver", lambda: {
        "tol": float(raw["solver"]["tol"]),
        "max_iter": int(raw["solver"]["max_iter"]),
        "dense_limit": int(raw["solver"]["dense_limit"]),
    })
    return RunConfig(raw, domain, grid, wave, n0, seed_value, solver)


def _grid(domain: Domain, spec: Any) -> Grid:
    cells = [int(spec)] * 3 if isinstance(spec, (int, float)) else [int(v) for v in spec]
    if len(cells) != 3:
        raise ValueError("grid needs 3 cell counts")
    return Grid(domain, tuple(cells))


def _profile(cfg: RunConfig, key: str) -> RefractionProfile:
    return _field(cfg.raw, key, lambda: RefractionProfile(expr_from_dict(cfg.require(key)), cfg.domain))


def _density_and_nu2(cfg: RunConfig) -> tuple[DensityProfile, RefractionProfile, dict]:
    """N and nu^2 from ``design`` (file), ``n_squared`` + ``strategy`` or direct fields."""
    if "design" in cfg.raw:
        def load():
            data = json.loads(Path(cfg.raw["design"]).read_text())
            return DesignResult.from_dict(data.get("design", data))
        result = _field(cfg.raw, "design", load)
        return result.density, result.nu_squared, {"source": "design-file"}
    if "density" in cfg.raw or "nu_squared" in cfg.raw:
        density = _field(cfg.raw, "density", lambda: DensityProfile(expr_from_dict(cfg.require("density")), cfg.domain))
        nu2 = _profile(cfg, "nu_squared")
        return density, nu2, {"source": "direct"}
    if "n_squared" in cfg.raw:
        result = _run_design(cfg, strict=True)
        return result.density, result.nu_squared, {"source": "designed", "strategy": str(result.strategy)}
    raise ConfigError("density", "need 'design', 'density'/'nu_squared' or 'n_squared'/'strategy'")


def _run_design(cfg: RunConfig, strict: bool) -> DesignResult:
    n2 = _profile(cfg, "n_squared")
    strategy = _field(cfg.raw, "strategy", lambda: Strategy.parse(cfg.require("strategy")))
    return design(n2, cfg.n0_squared, strategy, grid=cfg.grid, strict=strict)


def _header(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config": cfg.raw}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_design(cfg: RunConfig, out: Path) -> int:
    result = _run_design(cfg, strict=False)
    n2 = _profile(cfg, "n_squared")
    diagnostics = realizability_check(result, cfg.domain, cfg.grid)
    header = _header(cfg, "design")
    bmio.write_json(out / "design.json", {**header, "design": result.to_dict()})
    bmio.write_json(out / "diagnostics.json", {
        **header,
        "passed": all(d.passed for d in diagnostics),
        "identity_error": verify_design(result, cfg.n0_squared, n2, cfg.grid),
        "diagnostics": [d.to_dict() for d in diagnostics],
    })
    return EXIT_OK if all(d.passed for d in diagnostics) else EXIT_REALIZABILITY


def _effective_on(cfg: RunConfig, grid: Grid, density, nu2, mode: str = "single"):
    medium = BackgroundMedium(cfg.n0_squared, cfg.wave.k, grid, **cfg.solver)
    background = solve_background(cfg.n0_squared, cfg.wave, grid, medium=medium)
    effective = solve_effective(background, cfg.n0_squared, density, nu2, cfg.wave.k, grid, mode=mode, medium=medium)
    return background, effective


def _target_n2(cfg: RunConfig, density: DensityProfile, nu2: RefractionProfile) -> RefractionProfile:
    expr = cfg.n0_squared.expr + density.expr * nu2.expr
    return RefractionProfile(expr, cfg.domain, validate=False)


def cmd_effective(cfg: RunConfig, out: Path) -> int:
    density, nu2, provenance = _density_and_nu2(cfg)
    options = cfg.get("effective", {}) or {}
    mode = options.get("mode", "single")
    k = cfg.wave.k
    n2 = _target_n2(cfg, density, nu2)
    background, effective = _effective_on(cfg, cfg.grid, density, nu2, mode)
    header = _header(cfg, "effective")
    bmio.write_field_csv(out / "u_e.csv", effective.field, header)
    summary = {
        **header,
        "density_source": provenance,
        "field": bmio.field_summary(effective.field, effective.report),
        "residual": helmholtz_residual(effective.field, n2, k) if min(cfg.grid.shape) >= 5 else None,
    }
    grids = options.get("residual_grids")
    if grids:
        rows = []
        for spec in grids:
            g = _field(cfg.raw, "effective.residual_grids", lambda: _grid(cfg.domain, spec))
            _, eff = _effective_on(cfg, g, density, nu2, mode)
            rows.append({"grid": list(g.shape), "residual": helmholtz_residual(eff.field, n2, k)})
        summary["refinement"] = rows
        summary["ratios"] = [a["residual"] / b["residual"] for a, b in zip(rows, rows[1:])]
    if options.get("born_check"):
        if not background.medium.homogeneous:
            raise ConfigError("effective.born_check", "Born check needs a homogeneous background (n0_squared = 1)")
        order = int(options.get("born_order", 12))
        pts = cfg.grid.centers
        source = lambda z: k * k * density(z) * nu2(z) * cfg.wave(z)
        born = background.field.values + volume_potential(pts, cfg.domain, source, k, order=order)
        dev = np.linalg.norm(effective.field.values - born) / np.linalg.norm(born - background.field.values)
        summary["born_deviation"] = float(dev)
    bmio.write_json(out / "residual.json", summary)
    return EXIT_OK


def default_probes(domain: Domain, offset: float = 0.25) -> np.ndarray:
    """Six points beyond the face centers and two beyond opposite corners."""
    c = domain.center
    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    pts = []
    for axis in range(3):
        for side, sign in ((lo, -1.0), (hi, 1.0)):
            p = c.copy()
            p[axis] = side[axis] + sign * offset
            pts.append(p)
    pts.append(hi + offset * 0.8)
    pts.append(lo - offset * 0.8)
    return np.array(pts)


def cmd_converge(cfg: RunConfig, out: Path) -> int:
    radii = _field(cfg.raw, "radii", lambda: [float(a) for a in cfg.require("radii")])
    if len(radii) < 3:
        raise ConfigError("radii", "need at least 3 radii")
    if any(b >= a for a, b in zip(radii, radii[1:])) or radii[-1] <= 0:
        raise ConfigError("radii", "radii must be positive and strictly decreasing")
    probes = _field(cfg.raw, "probes", lambda: np.asarray(cfg.raw.get("probes") or default_probes(cfg.domain), dtype=float).reshape(-1, 3))
    cfg.raw["probes"] = probes.tolist()
    density, nu2, provenance = _density_and_nu2(cfg)
    k = cfg.wave.k

    t0 = time.perf_counter()
    background, effective = _effective_on(cfg, cfg.grid, density, nu2)
    u_e = effective(probes)
    t_effective = time.perf_counter() - t0
    medium = FreeSpaceMedium(k) if background.medium.homogeneous else background.medium

    rows = []
    for a in radii:
        row: dict[str, Any] = {"a": a}
        try:
            t = time.perf_counter()
            config = place_balls(density, nu2, a, cfg.domain, cfg.seed)
            row["M"] = config.M
            row["t_place"] = time.perf_counter() - t
            if config.M == 0:
                u = background(probes)
                row.update(t_assemble=0.0, t_solve=0.0)
            else:
                t = time.perf_counter()
                system = assemble_foldy(config, background, medium, k)
                row["t_assemble"] = time.perf_counter() - t
                t = time.perf_counter()
                solution = solve_discrete(system)
                row["t_solve"] = time.perf_counter() - t
                if np.any(config.contains(probes)):
                    logger.warning("a=%g: some probes lie inside balls; using the interior ball integral", a)
                u = evaluate_discrete_field(config, solution, background, medium, probes)
            t = time.perf_counter()
            row["error"] = float(np.max(np.abs(u - u_e)))
            row["t_evaluate"] = time.perf_counter() - t
            row["status"] = "ok"
        except RealizabilityError as exc:
            row.update(status="failed", reason=str(exc))
        except SolverError as exc:
            row.update(status="failed", reason=str(exc))
        logger.info("a=%g %s", a, row)
        rows.append(row)

    ok = [r for r in rows if r["status"] == "ok"]
    errors = [r["error"] for r in ok]
    verdict = len(ok) >= 3 and all(b < a for a, b in zip(errors, errors[1:]))
    header = _header(cfg, "converge")
    csv_rows = [(r["a"], r.get("M", ""), r["status"], r["error"] if r["status"] == "ok" else "") for r in rows]
    (out / "convergence.csv").write_text(bmio.csv_text(header, ["a", "M", "status", "error"], csv_rows))
    bmio.write_json(out / "report.json", {
        **header,
        "density_source": provenance,
        "effective": {"report": effective.report.to_dict(), "seconds": t_effective},
        "rows": rows,
        "monotone_decreasing": verdict,
        "successful_rows": len(ok),
    })
    return EXIT_OK


def _pair_samples(domain: Domain, y: np.ndarray, seed: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo = np.asarray(domain.lo) - 0.5 * domain.lengths
    hi = np.asarray(domain.hi) + 0.5 * domain.lengths
    far = rng.uniform(lo, hi, size=(count, 3))
    near = y + 0.02 * np.max(domain.lengths) * rng.standard_normal((count // 10 + 1, 3))
    pts = np.vstack([far, near])
    return pts[np.linalg.norm(pts - y, axis=1) > 0]


def cmd_probe_greens(cfg: RunConfig, out: Path) -> int:
    opts = cfg.get("greens", {}) or {}
    y = _field(cfg.raw, "source", lambda: np.asarray(cfg.raw.get("source", cfg.domain.center.tolist()), dtype=float).reshape(3))
    grids = _field(cfg.raw, "greens.grids", lambda: [_grid(cfg.domain, g) for g in opts.get("grids", [cfg.raw["grid"]])])
    d = float(opts.get("distance", 0.5 * float(np.min(cfg.grid.spacing))))
    direction = np.asarray(opts.get("direction", [1.0, 0.3, 0.2]), dtype=float)
    samples = _pair_samples(cfg.domain, y, cfg.seed, int(opts.get("samples", 200)))
    k = cfg.wave.k
    rows = []
    for grid in grids:
        _, evaluator, report = greens_function(cfg.n0_squared, k, y, grid, **cfg.solver)
        limit, seq = extrapolate_diagonal(evaluator, y, direction, d)
        rows.append({
            "grid": list(grid.shape),
            "sup_norm": weighted_sup_norm(samples, y, evaluator(samples)),
            "limit": {"re": limit.real, "im": limit.imag},
            "limit_deviation": abs(limit * FOUR_PI - 1.0),
            "sequence": [{"re": v.real, "im": v.imag} for v in seq],
            "report": report.to_dict(),
        })
    sups = [r["sup_norm"] for r in rows]
    bmio.write_json(out / "greens_diag.json", {
        **_header(cfg, "probe-greens"),
        "reference": 1.0 / FOUR_PI,
        "rows": rows,
        "limit_deviation": rows[-1]["limit_deviation"],
        "sup_norm_spread": (max(sups) - min(sups)) / max(sups),
    })
    return EXIT_OK


COMMANDS = {
    "design": cmd_design,
    "effective": cmd_effective,
    "converge": cmd_converge,
    "probe-greens": cmd_probe_greens,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ballmedium", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--threads", type=int, default=0, help="BLAS threads (0 = library default)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except RealizabilityError as exc:
        print(f"realizability failure: {exc}", file=sys.stderr)
        return EXIT_REALIZABILITY
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    limits = None
    if args.threads > 0:
        from threadpoolctl import threadpool_limits

        limits = threadpool_limits(args.threads)
    try:
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except RealizabilityError as exc:
        print(f"realizability failure: {exc}", file=sys.stderr)
        return EXIT_REALIZABILITY
    except SolverError as exc:
        detail = f" ({exc.report.to_dict()})" if getattr(exc, "report", None) is not None else ""
        print(f"solver failure: {exc}{detail}", file=sys.stderr)
        return EXIT_SOLVER
    finally:
        if limits is not None:
            limits.unregister()


if __name__ == "__main__":
    sys.exit(main())

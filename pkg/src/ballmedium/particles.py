"""Ball placement from a center density and the discrete many-ball problem.

Placement
---------
The domain is cut into macro-cells of side close to ``8a``, chosen per
axis so that a sub-lattice of pitch ``2a`` fills the cell as fully as
possible (see :func:`packing_capacity`).  A cell with
mean density ``N_c`` receives ``N_c H^3 / V_a`` centers in expectation.
Counts are rounded by seeded systematic sampling: one uniform offset ``u``
and running sums ``S_c`` along the cell order give
``n_c = floor(S_c + u) - floor(S_{c-1} + u)``, so every ``n_c`` is the
floor or ceiling of its expectation, the expectation is exact, and the
total count is off by less than one ball.

Inside a cell the centers occupy a random subset of an ``s^3`` sub-lattice
and are jittered by at most ``min(p/4, (p - 2a)/2)`` per axis for pitch
``p``, which keeps every pair at least ``2a`` apart and every ball inside
its macro-cell without rejection sampling.

Many-ball system
----------------
With one field value per ball,

    U_m = u0(x_m) + k^2 sum_j n_j^2 Gamma_mj U_j,
    Gamma_mj ~ V_a G(x_m, x_j)   (m != j),
    Gamma_mm = S_a(k) [+ V_a (G - g)(x_m, x_m)].
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from . import io as bmio
from .core import (
    FOUR_PI,
    PACKING_BOUND,
    BallConfig,
    DensityProfile,
    Domain,
    Grid,
    PackingError,
    RefractionProfile,
    Region,
    SolverError,
    as_points,
    ball_kernel_integral,
    ball_self_integral,
    ball_volume,
)

logger = logging.getLogger(__name__)

MACRO_CELL_FACTOR = 8.0
NEAR_PAIR_FACTOR = 4.0
DISCRETE_TOL = 1e-10
_DENSITY_SAMPLES = 4
_ROW_BLOCK = 256


class AssemblyError(ValueError):
    """The ball configuration cannot be assembled (e.g. coincident centers)."""


def _axis_cells(length: float, a: float, factor: float) -> int:
    # Among cell sides in [0.5, 2] * factor * a keep those whose sub-lattice
    # of pitch 2a fills the cell to within 1% of the best, then take the side
    # closest to factor * a.
    lo = max(1, math.ceil(length / (2.0 * factor * a)))
    hi = max(lo, math.ceil(length / (0.5 * factor * a)))
    cands = range(lo, hi + 1)

    def fill(m: int) -> float:
        x = length / (2.0 * a * m)
        return math.floor(x * (1.0 + 1e-12)) / x

    best = max(fill(m) for m in cands)
    good = [m for m in cands if fill(m) >= best - 0.01]
    return min(good, key=lambda m: abs(length / m - factor * a))


def _macro_cells(domain: Domain, a: float, factor: float):
    return Grid(domain, tuple(_axis_cells(float(L), a, factor) for L in domain.lengths))


def _cell_capacity(macro: Grid, a: float) -> np.ndarray:
    return np.floor(macro.spacing / (2.0 * a) * (1.0 + 1e-12)).astype(int)


def packing_capacity(a: float, domain: Domain, macro_factor: float = MACRO_CELL_FACTOR) -> float:
    """Largest uniform density that :func:`place_balls` can realize at radius ``a``.

    Equals ``pi/6`` when the macro-cell side is a multiple of ``2a`` and
    tends to ``pi/6`` as ``a -> 0``.
    """
    macro = _macro_cells(domain, a, macro_factor)
    return float(np.prod(_cell_capacity(macro, a)) * ball_volume(a) / macro.cell_volume)


def _cell_mean_density(density: DensityProfile, macro: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Mean and max of N over each macro-cell from a small midpoint sub-grid."""
    s = _DENSITY_SAMPLES
    offsets = ((np.arange(s) + 0.5) / s - 0.5)
    sub = np.stack(np.meshgrid(offsets, offsets, offsets, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = macro.centers[:, None, :] + sub[None, :, :] * macro.spacing
    vals = density(pts.reshape(-1, 3)).reshape(macro.size, -1)
    return vals.mean(axis=1), vals.max(axis=1)


def _lattice_shape(n: int, cap: np.ndarray) -> np.ndarray:
    """Smallest near-cubic sub-lattice with at least ``n`` sites within ``cap``."""
    s = max(1, math.ceil(round(n ** (1.0 / 3.0), 12)))
    shape = np.minimum(np.array([s, s, s]), cap)
    while np.prod(shape) < n:
        grow = np.flatnonzero(shape < cap)
        axis = grow[np.argmin(shape[grow])]
        shape[axis] += 1
    return shape


def _fill_cell(rng: np.random.Generator, lo: np.ndarray, size: np.ndarray, n: int, a: float, cap: np.ndarray):
    shape = _lattice_shape(n, cap)
    pitch = size / shape
    jitter = np.minimum(0.25 * pitch, 0.5 * (pitch - 2.0 * a))
    jitter = np.maximum(jitter, 0.0)
    chosen = np.sort(rng.choice(int(np.prod(shape)), size=n, replace=False))
    ijk = np.stack(np.unravel_index(chosen, tuple(shape)), axis=-1)
    sites = lo + (ijk + 0.5) * pitch
    return sites + rng.uniform(-1.0, 1.0, size=(n, 3)) * jitter


def place_balls(
    density: DensityProfile,
    nu_squared: RefractionProfile,
    a: float,
    domain: Domain,
    seed: int,
    macro_factor: float = MACRO_CELL_FACTOR,
) -> BallConfig:
    """Place non-intersecting balls of radius ``a`` with center density ``N``.

    Raises
    ------
    PackingError
        If N exceeds the simple-cubic bound pi/6 somewhere, or a macro-cell
        cannot hold its rounded count; the message names the macro-cell.
    """
    if not a > 0:
        raise ValueError("ball radius must be positive")
    macro = _macro_cells(domain, a, macro_factor)
    v_a = ball_volume(a)
    mean, peak = _cell_mean_density(density, macro)
    h = macro.spacing
    cap = _cell_capacity(macro, a)
    half = 0.5 * h

    bad = np.flatnonzero(peak > PACKING_BOUND * (1.0 + 1e-12))
    if bad.size:
        c = macro.centers[bad[0]]
        raise PackingError(
            f"density {peak[bad[0]]:.4g} exceeds packing bound pi/6 in region "
            f"[{', '.join(f'{v:.4g}' for v in c - half)}] - [{', '.join(f'{v:.4g}' for v in c + half)}]"
        )

    expected = mean * macro.cell_volume / v_a
    rng = np.random.default_rng(seed)
    offset = rng.random()
    running = np.concatenate([[0.0], np.cumsum(expected)])
    counts = np.diff(np.floor(running + offset)).astype(int)

    capacity = int(np.prod(cap)) if np.all(cap >= 1) else 0
    over = np.flatnonzero(counts > capacity)
    if over.size:
        c = macro.centers[over[0]]
        raise PackingError(
            f"macro-cell [{', '.join(f'{v:.4g}' for v in c - half)}] - "
            f"[{', '.join(f'{v:.4g}' for v in c + half)}] needs {counts[over[0]]} balls "
            f"but fits {capacity} at radius {a:g}"
        )

    pieces = []
    for idx in np.flatnonzero(counts):
        cell_rng = np.random.default_rng([seed, int(idx)])
        lo = macro.centers[idx] - half
        pieces.append(_fill_cell(cell_rng, lo, h, int(counts[idx]), a, cap))
    centers = np.concatenate(pieces) if pieces else np.zeros((0, 3))
    coeffs = nu_squared(centers) if len(centers) else np.zeros(0, dtype=complex)
    config = BallConfig(a, centers, coeffs, seed=seed)
    logger.info("placed %d balls of radius %g (expected %.1f)", config.M, a, expected.sum())
    return config


def count_in_region(config: BallConfig, region: Region | Callable[[np.ndarray], np.ndarray]) -> int:
    if config.M == 0:
        return 0
    return int(np.count_nonzero(region(config.centers)))


def riemann_sum(config: BallConfig, f: Any) -> complex:
    """``V_a * sum_m f(x_m)``; ``f`` is a callable or an array of samples."""
    values = f(config.centers) if callable(f) else np.asarray(f)
    if np.shape(values) != (config.M,):
        raise ValueError(f"expected {config.M} samples, got shape {np.shape(values)}")
    if not np.all(np.isfinite(values)):
        raise ValueError("samples must be finite")
    return complex(config.ball_volume * np.sum(values))


class VolumeFraction(NamedTuple):
    fraction: float
    exceeds: bool


def total_volume_fraction(config: BallConfig, domain: Domain) -> VolumeFraction:
    fraction = config.ball_volume * config.M / domain.volume
    return VolumeFraction(fraction, fraction > 1.0)


# ---------------------------------------------------------------------------
# Many-ball system
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class FoldySystem:
    matrix: np.ndarray
    rhs: np.ndarray
    config: BallConfig
    k: float


def assemble_foldy(
    config: BallConfig,
    u0: Callable[[np.ndarray], np.ndarray],
    greens: Any,
    k: float,
    self_correction: bool = False,
) -> FoldySystem:
    """Assemble ``(I - k^2 Gamma diag(n^2)) U = u0(x_m)``.

    ``greens`` is a medium object (:class:`~ballmedium.solvers.FreeSpaceMedium`
    or :class:`~ballmedium.solvers.BackgroundMedium`) providing
    ``regular_part``.  Pairs closer than ``4a`` use the exact ball integral
    of the singular part of ``g``.  ``self_correction`` adds
    ``V_a (G - g)(x_m, x_m)`` to the diagonal.
    """
    if config.M == 0:
        raise AssemblyError("empty ball configuration")
    if float(getattr(greens, "k", k)) != float(k):
        raise ValueError("Green's evaluator built for a different wavenumber")
    centers = config.centers
    tree = cKDTree(centers)
    if config.M > 1 and tree.query(centers, k=2)[0][:, 1].min() == 0.0:
        raise AssemblyError("coincident ball centers")
    m = config.M
    v_a = config.ball_volume
    regular = None
    if not greens.homogeneous:
        regular = greens.regular_part(centers, centers)
    gamma = np.empty((m, m), dtype=complex)
    for start in range(0, m, _ROW_BLOCK):
        rows = slice(start, min(start + _ROW_BLOCK, m))
        diff = centers[rows, None, :] - centers[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        np.fill_diagonal(r[:, start:], 1.0)
        gamma[rows] = v_a * np.exp(1j * k * r) / (FOUR_PI * r)
    pairs = tree.query_pairs(NEAR_PAIR_FACTOR * config.a, output_type="ndarray")
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        near = ball_kernel_integral(centers[i], centers[j], config.a, k)
        gamma[i, j] = near
        gamma[j, i] = near
    if regular is not None:
        gamma += v_a * regular
        gamma[np.diag_indices(m)] -= v_a * np.diag(regular)
    diag = ball_self_integral(config.a, k)
    gamma[np.diag_indices(m)] = diag
    if self_correction and regular is not None:
        gamma[np.diag_indices(m)] += v_a * np.diag(regular)
    matrix = gamma
    matrix *= -(k * k) * config.coeffs[None, :]
    matrix[np.diag_indices(m)] += 1.0
    rhs = np.asarray(u0(centers), dtype=complex)
    return FoldySystem(matrix, rhs, config, float(k))


def solve_discrete(system: FoldySystem, tol: float = DISCRETE_TOL) -> np.ndarray:
    """Dense LU solve of the many-ball system; returns ``U(x_m)``.

    Raises
    ------
    SolverError
        If the relative residual exceeds ``tol``; the message carries a
        reciprocal condition estimate.
    """
    a = system.matrix
    b = system.rhs
    try:
        with warnings.catch_warnings():
            # singularity is reported below through the residual check
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(a, check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SolverError(f"many-ball matrix could not be factorized: {exc}") from exc
    u = scipy.linalg.lu_solve(lu, b, check_finite=False)
    scale = np.linalg.norm(b)
    res = float(np.linalg.norm(a @ u - b) / scale) if scale > 0 else float(np.linalg.norm(a @ u))
    if not np.all(np.isfinite(u)) or res > tol:
        anorm = np.linalg.norm(a, 1)
        rcond, _ = scipy.linalg.lapack.zgecon(lu[0], anorm)
        raise SolverError(
            f"many-ball solve residual {res:.3e} > {tol:.1e} (reciprocal condition ~ {rcond:.2e})"
        )
    logger.info("many-ball solve: M=%d residual %.2e", system.config.M, res)
    return u


def evaluate_discrete_field(
    config: BallConfig,
    solution: np.ndarray,
    u0: Callable[[np.ndarray], np.ndarray],
    greens: Any,
    x: Any,
    k: float | None = None,
) -> np.ndarray:
    """``U(x) = u0(x) + k^2 sum_m n_m^2 Gamma(x, m) U_m`` at arbitrary points.

    Balls within ``4a`` of ``x`` (including one containing ``x``) use the
    exact ball integral of the singular part of ``g``.
    """
    k = float(greens.k if k is None else k)
    pts = as_points(x)
    flat = pts.reshape(-1, 3)
    if not np.all(np.isfinite(flat)):
        raise ValueError("evaluation points must be finite")
    solution = np.asarray(solution, dtype=complex)
    if not np.all(np.isfinite(solution)):
        raise ValueError("solution must be finite")
    out = np.asarray(u0(flat), dtype=complex).copy()
    if config.M == 0:
        return out.reshape(pts.shape[:-1])
    v_a = config.ball_volume
    weights = config.coeffs * solution
    step = max(1, (1 << 21) // config.M)
    for start in range(0, flat.shape[0], step):
        chunk = flat[start:start + step]
        diff = chunk[:, None, :] - config.centers[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        near = r < NEAR_PAIR_FACTOR * config.a
        safe = np.where(near, 1.0, r)
        gamma = np.where(near, 0.0, v_a * np.exp(1j * k * safe) / (FOUR_PI * safe))
        if np.any(near):
            pi, mj = np.nonzero(near)
            gamma[pi, mj] = ball_kernel_integral(chunk[pi], config.centers[mj], config.a, k)
        if not greens.homogeneous:
            gamma = gamma + v_a * greens.regular_part(chunk, config.centers)
        out[start:start + step] += k * k * (gamma @ weights)
    return out.reshape(pts.shape[:-1])


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------
def config_to_csv(config: BallConfig, header: dict | None = None) -> str:
    """CSV rows ``x,y,z,re_n2,im_n2`` under a JSON header with ``a``, ``M`` and ``seed``."""
    meta = {"a": config.a, "M": config.M, "seed": config.seed}
    if header:
        meta["config"] = header
    rows = ((c[0], c[1], c[2], n2.real, n2.imag) for c, n2 in zip(config.centers, config.coeffs))
    return bmio.csv_text(meta, ["x", "y", "z", "re_n2", "im_n2"], rows)


def config_from_csv(text: str) -> BallConfig:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("ball CSV must start with a JSON header line")
    meta = json.loads(lines[0][1:])
    data = np.array(list(csv.reader(lines[2:])), dtype=float).reshape(-1, 5)
    return BallConfig(float(meta["a"]), data[:, :3], data[:, 3] + 1j * data[:, 4], seed=meta.get("seed"))

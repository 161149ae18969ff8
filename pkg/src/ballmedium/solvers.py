"""Volume-integral solvers for the background field, Green's function and effective field.

All three problems are second-kind equations on the grid,

    u(x) + int_D g(x, z) m(z) u(z) dz = f(x),

discretized by collocation at cell centers with weights from
:func:`ballmedium.core.cell_kernel_integral`.  Because the cells are
identical, the weight between two cells depends only on their index
offset; the operator is stored as a table over offsets and expanded to a
dense matrix only when a direct solve is used.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .core import (
    FOUR_PI,
    DensityProfile,
    Domain,
    Grid,
    GridField,
    IncidentWave,
    KernelDomainError,
    RefractionProfile,
    SolverError,
    as_points,
    cell_kernel_integral,
    free_space_kernel,
)

logger = logging.getLogger(__name__)

DENSE_LIMIT = 4096
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 500
CELLS_PER_WAVELENGTH = 10
_ROW_BLOCK = 512


class ResolutionWarning(UserWarning):
    """Grid coarser than the recommended cells per wavelength."""


@dataclass(frozen=True)
class SolveReport:
    method: str
    iterations: int
    residual: float
    tolerance: float

    @property
    def converged(self) -> bool:
        return self.residual <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "residual": self.residual,
            "tolerance": self.tolerance,
        }


@dataclass(frozen=True, eq=False)
class ContrastField:
    """``q0 = k^2 - k^2 n0^2`` sampled at cell centers."""

    grid: Grid
    values: np.ndarray
    k: float


def derive_contrast(n0_squared: RefractionProfile, k: float, grid: Grid) -> ContrastField:
    values = k * k - k * k * n0_squared.sample(grid)
    values.setflags(write=False)
    return ContrastField(grid, values, float(k))


def check_resolution(grid: Grid, k: float) -> None:
    limit = (2.0 * math.pi / k) / CELLS_PER_WAVELENGTH
    if float(np.max(grid.spacing)) > limit:
        warnings.warn(
            f"grid spacing {np.max(grid.spacing):.4g} exceeds wavelength/10 = {limit:.4g}",
            ResolutionWarning,
            stacklevel=3,
        )


class VolumeOperator:
    """Discrete ``f -> int_D g(x, z) f(z) dz`` on a regular grid."""

    def __init__(self, grid: Grid, k: float):
        self.grid = grid
        self.k = float(k)
        shape = np.asarray(grid.shape)
        self._offset = shape - 1
        axes = [np.arange(-(n - 1), n) * h for n, h in zip(shape, grid.spacing)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        self._table = cell_kernel_integral(mesh, np.zeros(3), grid.spacing, self.k)
        self._index = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), axis=-1)
        self._centers = grid.centers

    @property
    def size(self) -> int:
        return self.grid.size

    def _rows(self, rows: np.ndarray) -> np.ndarray:
        diff = self._index[rows, None, :] - self._index[None, :, :] + self._offset
        return self._table[diff[..., 0], diff[..., 1], diff[..., 2]]

    def matrix(self) -> np.ndarray:
        n = self.size
        out = np.empty((n, n), dtype=complex)
        for start in range(0, n, _ROW_BLOCK):
            rows = np.arange(start, min(start + _ROW_BLOCK, n))
            out[rows] = self._rows(rows)
        return out

    def apply(self, f: np.ndarray) -> np.ndarray:
        """``W f`` without forming ``W``; O(n^2) work, O(block * n) memory."""
        f = np.asarray(f, dtype=complex)
        n = self.size
        out = np.empty(f.shape, dtype=complex)
        for start in range(0, n, _ROW_BLOCK):
            rows = np.arange(start, min(start + _ROW_BLOCK, n))
            out[rows] = self._rows(rows) @ f
        return out

    def weights(self, points: Any) -> np.ndarray:
        """Cell integrals of ``g(x, .)`` for arbitrary targets, shape ``(P, n)``."""
        pts = as_points(points).reshape(-1, 3)
        return cell_kernel_integral(pts[:, None, :], self._centers[None, :, :], self.grid.spacing, self.k)

    def apply_at(self, points: Any, f: np.ndarray) -> np.ndarray:
        pts = as_points(points).reshape(-1, 3)
        f = np.asarray(f, dtype=complex)
        out = np.empty((pts.shape[0],) + f.shape[1:], dtype=complex)
        step = max(1, (1 << 22) // max(self.size, 1))
        for start in range(0, pts.shape[0], step):
            out[start:start + step] = self.weights(pts[start:start + step]) @ f
        return out


def _residual(apply_a: Callable[[np.ndarray], np.ndarray], x: np.ndarray, b: np.ndarray) -> float:
    r = apply_a(x) - b
    scale = np.linalg.norm(b)
    return float(np.linalg.norm(r) / scale) if scale > 0 else float(np.linalg.norm(r))


class SecondKindSystem:
    """``(I + W diag(m)) u = f`` with lazy dense LU or restart-free GMRES."""

    def __init__(
        self,
        operator: VolumeOperator,
        multiplier: np.ndarray,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
        dense_limit: int = DENSE_LIMIT,
    ):
        self.operator = operator
        self.multiplier = np.asarray(multiplier, dtype=complex)
        self.tol = tol
        self.max_iter = max_iter
        self.dense = operator.size <= dense_limit
        self.trivial = not np.any(self.multiplier)
        self._matrix = None
        self._lu = None

    def apply(self, u: np.ndarray) -> np.ndarray:
        if self.trivial:
            return np.array(u, dtype=complex)
        m = self.multiplier.reshape((-1,) + (1,) * (np.ndim(u) - 1))
        if self._matrix is not None:
            return self._matrix @ u
        return u + self.operator.apply(m * u)

    def _factor(self):
        if self._lu is None:
            a = self.operator.matrix()
            a *= self.multiplier[None, :]
            a[np.diag_indices_from(a)] += 1.0
            self._matrix = a
            self._lu = scipy.linalg.lu_factor(a, check_finite=False)
        return self._lu

    def solve(self, rhs: np.ndarray) -> tuple[np.ndarray, SolveReport]:
        rhs = np.asarray(rhs, dtype=complex)
        if self.trivial:
            return rhs.copy(), SolveReport("identity", 0, 0.0, self.tol)
        if self.dense:
            x = scipy.linalg.lu_solve(self._factor(), rhs, check_finite=False)
            report = SolveReport("dense-lu", 1, _residual(self.apply, x, rhs), self.tol)
        else:
            x, report = self._gmres(rhs)
        if not np.all(np.isfinite(x)) or report.residual > self.tol:
            raise SolverError(f"linear solve stopped at residual {report.residual:.3e} > {self.tol:.1e}", report)
        return x, report

    def _gmres(self, rhs: np.ndarray) -> tuple[np.ndarray, SolveReport]:
        if rhs.ndim > 1:
            cols = [self._gmres(rhs[:, j]) for j in range(rhs.shape[1])]
            x = np.stack([c[0] for c in cols], axis=1)
            worst = max(cols, key=lambda c: c[1].residual)[1]
            return x, SolveReport("gmres", sum(c[1].iterations for c in cols), worst.residual, self.tol)
        n = self.operator.size
        op = scipy.sparse.linalg.LinearOperator((n, n), matvec=self.apply, dtype=complex)
        count = [0]

        def tick(_):
            count[0] += 1

        x, _ = scipy.sparse.linalg.gmres(
            op, rhs, rtol=self.tol * 0.5, atol=0.0, restart=self.max_iter, maxiter=1,
            callback=tick, callback_type="pr_norm",
        )
        return x, SolveReport("gmres", count[0], _residual(self.apply, x, rhs), self.tol)


class FreeSpaceMedium:
    """Homogeneous background: the Green's function is the free-space kernel."""

    homogeneous = True

    def __init__(self, k: float):
        self.k = float(k)

    def greens(self, x: Any, y: Any) -> np.ndarray:
        """Pairwise matrix ``G(x_p, y_q)``."""
        x = as_points(x).reshape(-1, 3)
        y = as_points(y).reshape(-1, 3)
        return free_space_kernel(x[:, None, :], y[None, :, :], self.k)

    def regular_part(self, x: Any, y: Any) -> np.ndarray:
        return np.zeros((as_points(x).reshape(-1, 3).shape[0], as_points(y).reshape(-1, 3).shape[0]), dtype=complex)


class BackgroundMedium:
    """Discretized background ``n0^2`` at wavenumber ``k`` on ``grid``.

    Holds the factorized system ``I + W diag(q0)`` and evaluates the
    Green's function through

        G(x, y) = g(x, y) - int_D g(x, z) q0(z) G(z, y) dz.

    The cell values ``G(x_j, y)`` are solved for once per source; the
    source cell itself carries the cell average of ``g(., y)`` so that
    every stored value is finite.
    """

    def __init__(
        self,
        n0_squared: RefractionProfile,
        k: float,
        grid: Grid,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
        dense_limit: int = DENSE_LIMIT,
    ):
        if not k > 0:
            raise ValueError("wavenumber must be positive")
        check_resolution(grid, k)
        self.n0_squared = n0_squared
        self.k = float(k)
        self.grid = grid
        self.contrast = derive_contrast(n0_squared, k, grid)
        self.operator = VolumeOperator(grid, k)
        self.system = SecondKindSystem(self.operator, self.contrast.values, tol, max_iter, dense_limit)
        self.tol, self.max_iter, self.dense_limit = tol, max_iter, dense_limit

    @property
    def homogeneous(self) -> bool:
        return self.system.trivial

    @property
    def q(self) -> np.ndarray:
        return self.contrast.values

    def with_multiplier(self, multiplier: np.ndarray) -> SecondKindSystem:
        return SecondKindSystem(self.operator, multiplier, self.tol, self.max_iter, self.dense_limit)

    def source_samples(self, y: Any) -> np.ndarray:
        """Right-hand side ``g(x_j, y)`` with cell averages where ``y`` is close."""
        y = as_points(y).reshape(-1, 3)
        centers = self.operator._centers
        diff = centers[:, None, :] - y[None, :, :]
        r = np.linalg.norm(diff, axis=-1)
        near = r <= 0.5 * float(np.linalg.norm(self.grid.spacing))
        out = np.empty(r.shape, dtype=complex)
        out[~near] = np.exp(1j * self.k * r[~near]) / (FOUR_PI * r[~near])
        if np.any(near):
            out[near] = cell_kernel_integral(diff[near], np.zeros(3), self.grid.spacing, self.k) / self.grid.cell_volume
        return out

    def greens_cells(self, y: Any) -> tuple[np.ndarray, SolveReport]:
        """Cell values ``G(x_j, y_q)``, shape ``(n, Q)``."""
        return self.system.solve(self.source_samples(y))

    def regular_part(self, x: Any, y: Any) -> np.ndarray:
        """``G - g`` as a pairwise matrix ``(P, Q)``; bounded even at ``x = y``."""
        x = as_points(x).reshape(-1, 3)
        y = as_points(y).reshape(-1, 3)
        if self.homogeneous:
            return np.zeros((x.shape[0], y.shape[0]), dtype=complex)
        cells, _ = self.greens_cells(y)
        return -self.operator.apply_at(x, self.q[:, None] * cells)

    def greens(self, x: Any, y: Any) -> np.ndarray:
        x = as_points(x).reshape(-1, 3)
        y = as_points(y).reshape(-1, 3)
        g = free_space_kernel(x[:, None, :], y[None, :, :], self.k)
        return g + self.regular_part(x, y)


@dataclass(frozen=True, eq=False)
class BackgroundSolution:
    """Background field ``u0`` with its off-grid representation."""

    field: GridField
    report: SolveReport
    wave: IncidentWave
    medium: BackgroundMedium

    def __call__(self, x: Any) -> np.ndarray:
        pts = as_points(x)
        flat = pts.reshape(-1, 3)
        out = self.wave(flat)
        if not self.medium.homogeneous:
            out = out - self.medium.operator.apply_at(flat, self.medium.q * self.field.values)
        return out.reshape(pts.shape[:-1])

    def scattered(self, x: Any) -> np.ndarray:
        return self(x) - self.wave(x)

    @property
    def scattered_field(self) -> GridField:
        return GridField(self.field.grid, self.field.values - self.wave(self.field.grid.centers))


def solve_background(
    n0_squared: RefractionProfile,
    wave: IncidentWave,
    grid: Grid,
    medium: BackgroundMedium | None = None,
    **solver_options,
) -> BackgroundSolution:
    """Solve ``u0 = e^{ik alpha.x} - int_D g q0 u0`` on ``grid``.

    The outgoing kernel makes the scattered part radiate; no condition at
    infinity is imposed separately.

    Raises
    ------
    SolverError
        If the linear solve misses its tolerance; ``err.report`` holds the
        final residual.
    """
    if medium is None:
        medium = BackgroundMedium(n0_squared, wave.k, grid, **solver_options)
    elif medium.grid != grid or medium.k != wave.k:
        raise ValueError("medium was built for a different grid or wavenumber")
    values, report = medium.system.solve(wave(grid.centers))
    logger.info("background solve: %s, residual %.2e", report.method, report.residual)
    return BackgroundSolution(GridField(grid, values), report, wave, medium)


class GreensEvaluator:
    """``x -> G(x, y)`` for a fixed source ``y``."""

    def __init__(self, medium: BackgroundMedium, y: Any, cells: np.ndarray):
        self.medium = medium
        self.y = as_points(y).reshape(3)
        self.cells = cells

    def __call__(self, x: Any) -> np.ndarray:
        pts = as_points(x)
        flat = pts.reshape(-1, 3)
        g = free_space_kernel(flat, self.y[None, :], self.medium.k)
        if not self.medium.homogeneous:
            g = g - self.medium.operator.apply_at(flat, self.medium.q * self.cells)
        return g.reshape(pts.shape[:-1])


def greens_function(
    n0_squared: RefractionProfile,
    k: float,
    y: Any,
    grid: Grid,
    medium: BackgroundMedium | None = None,
    **solver_options,
) -> tuple[GridField, GreensEvaluator, SolveReport]:
    """Green's function of the background for the source point ``y``.

    The returned field holds ``G(x_j, y)`` at cell centers (the cell
    average of ``g`` in the cell containing ``y``).  The evaluator raises
    :class:`KernelDomainError` at ``x = y``.
    """
    if medium is None:
        medium = BackgroundMedium(n0_squared, k, grid, **solver_options)
    cells, report = medium.greens_cells(y)
    cells = cells[:, 0]
    return GridField(grid, cells), GreensEvaluator(medium, y, cells), report


def weighted_sup_norm(x: Any, y: Any, values: Any) -> float:
    """``max |x - y| |G(x, y)|`` over sampled pairs."""
    x = as_points(x).reshape(-1, 3)
    y = np.broadcast_to(as_points(y), x.shape)
    values = np.broadcast_to(np.asarray(values), x.shape[:1])
    if x.shape[0] == 0:
        raise ValueError("weighted_sup_norm needs at least one sample pair")
    r = np.linalg.norm(x - y, axis=-1)
    if np.any(r == 0):
        raise KernelDomainError("sample pairs must have x != y")
    return float(np.max(r * np.abs(values)))


def extrapolate_diagonal(
    evaluator: Callable[[np.ndarray], np.ndarray],
    y: Any,
    direction: Any,
    d: float,
) -> tuple[complex, np.ndarray]:
    """Richardson limit of ``|x - y| G(x, y)`` as ``x -> y``.

    Samples at distances ``d, d/2, d/4`` along ``direction`` and eliminates
    the linear and quadratic terms.  Returns the limit and the samples.
    """
    y = as_points(y).reshape(3)
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    dist = d / np.array([1.0, 2.0, 4.0])
    f = dist * evaluator(y + dist[:, None] * e)
    limit = (8.0 * f[2] - 6.0 * f[1] + f[0]) / 3.0
    return complex(limit), f


def radial_decay(
    scattered: Callable[[np.ndarray], np.ndarray],
    center: Any,
    direction: Any,
    radii: Any,
) -> np.ndarray:
    """``|v(x)| r`` at ``x = center + r * direction``; flat for outgoing 1/r decay."""
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    radii = np.asarray(radii, dtype=float)
    pts = np.asarray(center, dtype=float)[None, :] + radii[:, None] * e
    return np.abs(scattered(pts)) * radii


@dataclass(frozen=True, eq=False)
class EffectiveSolution:
    field: GridField
    report: SolveReport
    background: BackgroundSolution | None
    total_multiplier: np.ndarray
    mode: str

    def __call__(self, x: Any) -> np.ndarray:
        """Off-grid ``u_e(x) = u0(x) - int g (q_tot u_e - q0 u0)``."""
        if self.background is None:
            raise ValueError("off-grid evaluation needs the background solution")
        pts = as_points(x)
        flat = pts.reshape(-1, 3)
        medium = self.background.medium
        density = self.total_multiplier * self.field.values - medium.q * self.background.field.values
        out = self.background(flat) - medium.operator.apply_at(flat, density)
        return out.reshape(pts.shape[:-1])


def solve_effective(
    u0: BackgroundSolution | GridField,
    n0_squared: RefractionProfile,
    density: DensityProfile,
    nu_squared: RefractionProfile,
    k: float,
    grid: Grid,
    mode: str = "single",
    medium: BackgroundMedium | None = None,
    **solver_options,
) -> EffectiveSolution:
    """Effective field ``u_e = u0 + k^2 int_D G N nu^2 u_e``.

    ``mode="single"`` solves the equivalent free-space form with total
    multiplier ``q0 - k^2 N nu^2`` and right-hand side ``(I + W q0) u0``,
    which is the incident wave at the discrete level.  ``mode="direct"``
    builds the cell-integrated background Green's matrix
    ``C = (I + W q0)^-1 W`` and solves ``(I - k^2 C diag(N nu^2)) u_e = u0``;
    it costs a dense ``n x n`` solve and exists for cross-checking.
    """
    background = u0 if isinstance(u0, BackgroundSolution) else None
    u0_field = u0.field if background is not None else u0
    if u0_field.grid != grid:
        raise ValueError("u0 lives on a different grid than the effective solve")
    if medium is None:
        medium = background.medium if background is not None else BackgroundMedium(n0_squared, k, grid, **solver_options)
    if medium.grid != grid or medium.k != float(k):
        raise ValueError("medium was built for a different grid or wavenumber")
    centers = grid.centers
    added = k * k * density(centers) * nu_squared(centers)
    total = medium.q - added
    if mode == "single":
        rhs = u0_field.values + (medium.operator.apply(medium.q * u0_field.values) if not medium.homogeneous else 0.0)
        values, report = medium.with_multiplier(total).solve(rhs)
    elif mode == "direct":
        values, report = _solve_effective_direct(medium, u0_field.values, added)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return EffectiveSolution(GridField(grid, values), report, background, total, mode)


def _solve_effective_direct(medium: BackgroundMedium, u0: np.ndarray, added: np.ndarray):
    w = medium.operator.matrix()
    if medium.homogeneous:
        c = w
    else:
        c, _ = SecondKindSystem(medium.operator, medium.q, medium.tol, medium.max_iter, dense_limit=medium.grid.size).solve(w)
    a = -c * added[None, :]
    a[np.diag_indices_from(a)] += 1.0
    values = scipy.linalg.solve(a, u0, check_finite=False)
    res = float(np.linalg.norm(a @ values - u0) / np.linalg.norm(u0))
    report = SolveReport("dense-direct-greens", 1, res, medium.tol)
    if res > medium.tol:
        raise SolverError(f"direct effective solve residual {res:.3e}", report)
    return values, report


def helmholtz_residual(field: GridField, n_squared: RefractionProfile, k: float) -> float:
    """Relative 7-point residual of ``(lap + k^2 n^2) u`` on interior cells.

    One layer of boundary cells is excluded.  Normalized by the norm of
    ``k^2 n^2 u`` over the same cells.
    """
    grid = field.grid
    if min(grid.shape) < 5:
        raise ValueError("helmholtz_residual needs at least 5 cells per axis")
    u = field.as_array()
    h2 = grid.spacing**2
    core = u[1:-1, 1:-1, 1:-1]
    lap = (
        (u[2:, 1:-1, 1:-1] - 2 * core + u[:-2, 1:-1, 1:-1]) / h2[0]
        + (u[1:-1, 2:, 1:-1] - 2 * core + u[1:-1, :-2, 1:-1]) / h2[1]
        + (u[1:-1, 1:-1, 2:] - 2 * core + u[1:-1, 1:-1, :-2]) / h2[2]
    )
    n2 = n_squared.sample(grid).reshape(grid.shape)[1:-1, 1:-1, 1:-1]
    source = k * k * n2 * core
    scale = np.linalg.norm(source)
    if scale == 0:
        raise ValueError("residual normalization vanishes (field is zero on interior cells)")
    return float(np.linalg.norm(lap + source) / scale)


# ---------------------------------------------------------------------------
# Independent quadrature of volume potentials (Born terms)
# ---------------------------------------------------------------------------
def _face_patches(domain: Domain, x: np.ndarray):
    """Yield ``(origin, edge_u, edge_v, normal_distance_signed)`` rectangles.

    Each face of the box is split at the foot of the perpendicular from
    ``x`` so the cone integrand is smooth on every patch.
    """
    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    for axis in range(3):
        others = [i for i in range(3) if i != axis]
        for side, sign in ((lo, -1.0), (hi, 1.0)):
            signed = sign * (side[axis] - x[axis])
            if signed == 0.0:
                continue
            cuts = []
            for i in others:
                c = [lo[i], hi[i]]
                if lo[i] < x[i] < hi[i]:
                    c = [lo[i], x[i], hi[i]]
                cuts.append(c)
            for a0, a1 in zip(cuts[0][:-1], cuts[0][1:]):
                for b0, b1 in zip(cuts[1][:-1], cuts[1][1:]):
                    origin = np.empty(3)
                    origin[axis] = side[axis]
                    origin[others[0]], origin[others[1]] = a0, b0
                    eu = np.zeros(3)
                    ev = np.zeros(3)
                    eu[others[0]] = a1 - a0
                    ev[others[1]] = b1 - b0
                    yield origin, eu, ev, signed


def volume_potential(
    points: Any,
    domain: Domain,
    density: Callable[[np.ndarray], np.ndarray],
    k: float,
    order: int = 24,
) -> np.ndarray:
    """``int_D g(x, z) f(z) dz`` by cone decomposition and Gauss-Legendre.

    The box is written as a signed sum of cones with apex ``x`` over its
    faces.  In cone coordinates ``z = x + t (p - x)`` the volume element
    ``t^2 d dt dA`` cancels the ``1/r`` singularity, so tensor Gauss rules
    converge spectrally for smooth ``f`` wherever ``x`` is.  This path
    shares nothing with the grid collocation and serves as its oracle.
    """
    pts = as_points(points).reshape(-1, 3)
    nodes, wts = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (nodes + 1.0)
    w = 0.5 * wts
    out = np.zeros(pts.shape[0], dtype=complex)
    for idx, x in enumerate(pts):
        total = 0.0j
        for origin, eu, ev, signed in _face_patches(domain, x):
            area = np.linalg.norm(eu) * np.linalg.norm(ev)
            p = origin + s[:, None, None] * eu + s[None, :, None] * ev
            rel = p - x
            rho = np.linalg.norm(rel, axis=-1)
            z = x + s[:, None, None, None] * rel[None]
            t = s[:, None, None]
            f = density(z.reshape(-1, 3)).reshape(z.shape[:-1])
            integrand = t * np.exp(1j * k * t * rho[None]) / (FOUR_PI * rho[None]) * f
            wt = w[:, None, None] * w[None, :, None] * w[None, None, :]
            total += signed * area * np.sum(wt * integrand)
        out[idx] = total
    return out.reshape(as_points(points).shape[:-1])

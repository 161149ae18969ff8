"""Geometry, field containers, refraction profiles and analytic kernels.

Everything here is immutable after construction.  Points are passed as
arrays of shape ``(..., 3)``; kernels broadcast over the leading axes.

Kernels
-------
    g(x, y)      = exp(ik|x-y|) / (4 pi |x-y|)          free-space kernel
    P_a(x; c)    = int_{|y-c|<=a} |x-y|^-1 dy            Newtonian ball potential
    S_a(k)       = int_{|y|<=a} g(0, y) dy               ball self-integral
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
#: Simple-cubic packing fraction; upper bound for the local density N(x).
PACKING_BOUND = math.pi / 6.0
#: Imaginary parts below ``-IMAG_TOL`` violate ``Im >= 0``.
IMAG_TOL = 1e-12


class KernelDomainError(ValueError):
    """Kernel evaluated at a singular point."""


class RealizabilityError(ValueError):
    """A design or placement violates a physical constraint."""


class PackingError(RealizabilityError):
    """Requested density exceeds what non-intersecting balls can realize."""


class SolverError(RuntimeError):
    """A linear solve did not reach its tolerance."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


def as_points(x: Any) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1] != 3:
        raise ValueError(f"expected points with trailing dimension 3, got shape {pts.shape}")
    return pts


def parse_complex(value: Any) -> complex:
    """Accept numbers, ``"1+2j"`` strings and ``{"re": .., "im": ..}`` mappings."""
    if isinstance(value, dict):
        return complex(float(value.get("re", 0.0)), float(value.get("im", 0.0)))
    if isinstance(value, str):
        return complex(value.replace(" ", ""))
    if isinstance(value, (int, float, complex, np.number)):
        return complex(value)
    raise ValueError(f"cannot interpret {value!r} as a complex number")


def complex_to_json(value: complex) -> Any:
    value = complex(value)
    if value.imag == 0.0:
        return value.real
    return {"re": value.real, "im": value.imag}


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lo, hi]``."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("domain corners must be 3-vectors")
        if not all(l < h for l, h in zip(lo, hi)):
            raise ValueError(f"domain requires lo < hi componentwise, got {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit_cube(cls) -> "Domain":
        return cls((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))

    @property
    def lengths(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def contains(self, x: Any) -> np.ndarray:
        pts = as_points(x)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, data: dict) -> "Domain":
        return cls(tuple(data["lo"]), tuple(data["hi"]))


@dataclass(frozen=True)
class Grid:
    """Regular tiling of a domain by ``cells_per_axis`` boxes.

    Cells are numbered in C order, so ``values.reshape(shape)`` gives an
    ``(nx, ny, nz)`` array indexed by cell position.
    """

    domain: Domain
    cells_per_axis: tuple[int, int, int]

    def __post_init__(self):
        shape = tuple(int(n) for n in np.broadcast_to(self.cells_per_axis, (3,)))
        if any(n < 1 for n in shape):
            raise ValueError(f"cells_per_axis must be positive, got {shape}")
        object.__setattr__(self, "cells_per_axis", shape)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.cells_per_axis

    @property
    def size(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def spacing(self) -> np.ndarray:
        return self.domain.lengths / np.asarray(self.cells_per_axis)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def centers(self) -> np.ndarray:
        axes = [
            lo + (np.arange(n) + 0.5) * h
            for lo, n, h in zip(self.domain.lo, self.cells_per_axis, self.spacing)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_index(self, x: Any) -> np.ndarray:
        """Index of the cell containing each point (-1 outside the domain)."""
        pts = as_points(x)
        rel = (pts - np.asarray(self.domain.lo)) / self.spacing
        ijk = np.floor(rel).astype(int)
        shape = np.asarray(self.cells_per_axis)
        ijk = np.where(np.isclose(rel, shape), shape - 1, ijk)
        inside = np.all((ijk >= 0) & (ijk < shape), axis=-1)
        flat = np.ravel_multi_index(tuple(np.clip(ijk, 0, shape - 1).T), self.cells_per_axis)
        return np.where(inside, flat, -1)

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "cells": list(self.cells_per_axis)}


@dataclass(frozen=True, eq=False)
class GridField:
    """Complex samples of a field at the cell centers of ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex).ravel()
        if vals.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values) * math.sqrt(self.grid.cell_volume))

    def __add__(self, other: "GridField") -> "GridField":
        _check_same_grid(self, other)
        return GridField(self.grid, self.values + other.values)

    def __sub__(self, other: "GridField") -> "GridField":
        _check_same_grid(self, other)
        return GridField(self.grid, self.values - other.values)

    def scale(self, c: complex) -> "GridField":
        return GridField(self.grid, c * self.values)


def _check_same_grid(a: GridField, b: GridField) -> None:
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------
class Region:
    """Membership predicate over points.  Subclasses are plain value objects."""

    def __call__(self, x: Any) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> Any:
        raise NotImplementedError

    def __and__(self, other: "Region") -> "Region":
        return Intersection((self, other))

    def __or__(self, other: "Region") -> "Region":
        return Union((self, other))

    def __invert__(self) -> "Region":
        return Complement(self)


@dataclass(frozen=True)
class Everywhere(Region):
    def __call__(self, x):
        return np.ones(as_points(x).shape[:-1], dtype=bool)

    def to_dict(self):
        return "all"


@dataclass(frozen=True)
class Box(Region):
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __call__(self, x):
        pts = as_points(x)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def to_dict(self):
        return {"box": {"lo": list(self.lo), "hi": list(self.hi)}}


@dataclass(frozen=True)
class Ball(Region):
    center: tuple[float, float, float]
    radius: float

    def __call__(self, x):
        return np.linalg.norm(as_points(x) - np.asarray(self.center), axis=-1) <= self.radius

    def to_dict(self):
        return {"ball": {"center": list(self.center), "radius": self.radius}}


@dataclass(frozen=True)
class HalfSpace(Region):
    """Points with ``normal . x <= offset``."""

    normal: tuple[float, float, float]
    offset: float

    def __call__(self, x):
        return as_points(x) @ np.asarray(self.normal, dtype=float) <= self.offset

    def to_dict(self):
        return {"halfspace": {"normal": list(self.normal), "offset": self.offset}}


@dataclass(frozen=True)
class Union(Region):
    parts: tuple[Region, ...]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    def __call__(self, x):
        out = np.zeros(as_points(x).shape[:-1], dtype=bool)
        for p in self.parts:
            out |= p(x)
        return out

    def to_dict(self):
        return {"union": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class Intersection(Region):
    parts: tuple[Region, ...]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    def __call__(self, x):
        out = np.ones(as_points(x).shape[:-1], dtype=bool)
        for p in self.parts:
            out &= p(x)
        return out

    def to_dict(self):
        return {"intersection": [p.to_dict() for p in self.parts]}


@dataclass(frozen=True)
class Complement(Region):
    part: Region

    def __call__(self, x):
        return ~self.part(x)

    def to_dict(self):
        return {"complement": self.part.to_dict()}


def region_from_dict(data: Any) -> Region:
    if data == "all":
        return Everywhere()
    if not isinstance(data, dict) or len(data) != 1:
        raise ValueError(f"cannot parse region {data!r}")
    (kind, body), = data.items()
    if kind == "box":
        return Box(tuple(map(float, body["lo"])), tuple(map(float, body["hi"])))
    if kind == "ball":
        return Ball(tuple(map(float, body["center"])), float(body["radius"]))
    if kind == "halfspace":
        return HalfSpace(tuple(map(float, body["normal"])), float(body["offset"]))
    if kind == "union":
        return Union(tuple(region_from_dict(p) for p in body))
    if kind == "intersection":
        return Intersection(tuple(region_from_dict(p) for p in body))
    if kind == "complement":
        return Complement(region_from_dict(body))
    raise ValueError(f"unknown region kind {kind!r}")


# ---------------------------------------------------------------------------
# Scalar field expressions
# ---------------------------------------------------------------------------
class FieldExpr:
    """Closed-form complex scalar field; the building block of profiles."""

    def __call__(self, x: Any) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> Any:
        raise NotImplementedError

    def __add__(self, other):
        return combine("add", self, other)

    def __sub__(self, other):
        return combine("sub", self, other)

    def __mul__(self, other):
        return combine("mul", self, other)

    def __truediv__(self, other):
        return combine("div", self, other)


@dataclass(frozen=True)
class Constant(FieldExpr):
    value: complex

    def __call__(self, x):
        return np.full(as_points(x).shape[:-1], complex(self.value))

    def to_dict(self):
        return complex_to_json(self.value)


@dataclass(frozen=True)
class Bump(FieldExpr):
    """``base + amplitude * exp(1 - 1/(1 - t^2))`` with ``t = |x-c|/radius``.

    C-infinity, equal to ``base + amplitude`` at the center and exactly
    ``base`` for ``t >= 1``.
    """

    center: tuple[float, float, float]
    radius: float
    amplitude: complex
    base: complex = 0.0

    def __call__(self, x):
        t2 = np.sum((as_points(x) - np.asarray(self.center)) ** 2, axis=-1) / self.radius**2
        inside = t2 < 1.0
        shape = np.zeros_like(t2)
        shape[inside] = np.exp(1.0 - 1.0 / (1.0 - t2[inside]))
        return complex(self.base) + complex(self.amplitude) * shape

    def to_dict(self):
        return {
            "bump": {
                "center": list(self.center),
                "radius": self.radius,
                "amplitude": complex_to_json(self.amplitude),
                "base": complex_to_json(self.base),
            }
        }


@dataclass(frozen=True)
class Piecewise(FieldExpr):
    """First matching piece wins; points matching no piece take ``default``."""

    pieces: tuple[tuple[Region, FieldExpr], ...]
    default: FieldExpr = Constant(1.0)

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple((r, as_expr(e)) for r, e in self.pieces))
        object.__setattr__(self, "default", as_expr(self.default))

    def __call__(self, x):
        pts = as_points(x)
        out = np.asarray(self.default(pts), dtype=complex).copy()
        claimed = np.zeros(pts.shape[:-1], dtype=bool)
        for region, expr in self.pieces:
            hit = region(pts) & ~claimed
            if np.any(hit):
                out[hit] = expr(pts[hit])
            claimed |= hit
        return out

    def to_dict(self):
        return {
            "piecewise": [{"region": r.to_dict(), "value": e.to_dict()} for r, e in self.pieces],
            "default": self.default.to_dict(),
        }


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
}


@dataclass(frozen=True)
class BinaryOp(FieldExpr):
    op: str
    left: FieldExpr
    right: FieldExpr

    def __post_init__(self):
        if self.op not in _BINARY:
            raise ValueError(f"unknown operator {self.op!r}")

    def __call__(self, x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return _BINARY[self.op](self.left(x), self.right(x))

    def to_dict(self):
        return {self.op: [self.left.to_dict(), self.right.to_dict()]}


def combine(op: str, left: Any, right: Any) -> FieldExpr:
    """``BinaryOp(op, left, right)``, folded to a :class:`Constant` when both sides are."""
    left, right = as_expr(left), as_expr(right)
    if isinstance(left, Constant) and isinstance(right, Constant):
        with np.errstate(divide="ignore", invalid="ignore"):
            value = _BINARY[op](np.complex128(left.value), np.complex128(right.value))
        return Constant(complex(value))
    return BinaryOp(op, left, right)


@dataclass(frozen=True)
class SelectNonzero(FieldExpr):
    """``value`` where ``test != 0`` and exactly 0 elsewhere."""

    test: FieldExpr
    value: FieldExpr

    def __call__(self, x):
        t = self.test(x)
        return np.where(t != 0, self.value(x), 0.0 + 0.0j)

    def to_dict(self):
        return {"select_nonzero": [self.test.to_dict(), self.value.to_dict()]}


def as_expr(value: Any) -> FieldExpr:
    if isinstance(value, FieldExpr):
        return value
    return Constant(parse_complex(value))


def expr_from_dict(data: Any) -> FieldExpr:
    if isinstance(data, (int, float, str)) or (isinstance(data, dict) and set(data) <= {"re", "im"}):
        return Constant(parse_complex(data))
    if not isinstance(data, dict):
        raise ValueError(f"cannot parse field expression {data!r}")
    if "piecewise" in data:
        pieces = tuple(
            (region_from_dict(p["region"]), expr_from_dict(p["value"])) for p in data["piecewise"]
        )
        return Piecewise(pieces, expr_from_dict(data.get("default", 1.0)))
    if len(data) != 1:
        raise ValueError(f"cannot parse field expression {data!r}")
    (kind, body), = data.items()
    if kind == "constant":
        return Constant(parse_complex(body))
    if kind == "bump":
        return Bump(
            tuple(map(float, body["center"])),
            float(body["radius"]),
            parse_complex(body.get("amplitude", 1.0)),
            parse_complex(body.get("base", 0.0)),
        )
    if kind in _BINARY:
        left, right = body
        return BinaryOp(kind, expr_from_dict(left), expr_from_dict(right))
    if kind == "select_nonzero":
        test, value = body
        return SelectNonzero(expr_from_dict(test), expr_from_dict(value))
    raise ValueError(f"unknown field expression kind {kind!r}")


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------
def _validation_points(domain: Domain, n: int = 12) -> np.ndarray:
    return Grid(domain, (n, n, n)).centers


@dataclass(frozen=True)
class RefractionProfile:
    """Complex refraction coefficient on ``domain``; identically 1 outside.

    With ``validate=True`` the constructor samples the field on a 12^3
    grid and rejects ``Im < 0``.  Designs whose realizability is still
    under review are built with ``validate=False``.
    """

    expr: FieldExpr
    domain: Domain
    validate: bool = field(default=True, compare=False)

    exterior = 1.0 + 0.0j

    def __post_init__(self):
        object.__setattr__(self, "expr", as_expr(self.expr))
        if self.validate:
            vals = self.expr(_validation_points(self.domain))
            if not np.all(np.isfinite(vals)):
                raise ValueError("refraction profile is not finite on the domain")
            worst = float(np.min(vals.imag))
            if worst < -IMAG_TOL:
                raise RealizabilityError(f"refraction profile has Im < 0 (min Im = {worst:.3e})")

    @classmethod
    def constant(cls, value: complex, domain: Domain) -> "RefractionProfile":
        return cls(Constant(complex(value)), domain)

    def __call__(self, x: Any) -> np.ndarray:
        pts = as_points(x)
        inside = self.domain.contains(pts)
        out = np.full(pts.shape[:-1], self.exterior, dtype=complex)
        if np.any(inside):
            out[inside] = self.expr(pts[inside])
        return out

    def sample(self, grid: Grid) -> np.ndarray:
        return self(grid.centers)

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "value": self.expr.to_dict()}

    @classmethod
    def from_dict(cls, data: dict, domain: Domain | None = None, validate: bool = True):
        dom = Domain.from_dict(data["domain"]) if "domain" in data else domain
        if dom is None:
            raise ValueError("profile needs a domain")
        return cls(expr_from_dict(data["value"]), dom, validate=validate)


@dataclass(frozen=True)
class DensityProfile(RefractionProfile):
    """Real nonnegative center density N(x); identically 0 outside the domain."""

    exterior = 0.0 + 0.0j

    def __post_init__(self):
        object.__setattr__(self, "expr", as_expr(self.expr))
        if self.validate:
            vals = self.expr(_validation_points(self.domain))
            if not np.all(np.isfinite(vals)):
                raise ValueError("density is not finite on the domain")
            if np.max(np.abs(vals.imag)) > IMAG_TOL:
                raise RealizabilityError("density must be real-valued")
            if np.min(vals.real) < 0.0:
                raise RealizabilityError(f"density must be >= 0 (min = {np.min(vals.real):.3e})")

    def __call__(self, x: Any) -> np.ndarray:
        return super().__call__(x).real

    def integral(self, n: int = 32) -> float:
        """Midpoint-rule estimate of the integral of N over the domain."""
        grid = Grid(self.domain, (n, n, n))
        return float(np.sum(self(grid.centers)) * grid.cell_volume)


# ---------------------------------------------------------------------------
# Waves and ball configurations
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class IncidentWave:
    """Plane wave ``amplitude * exp(i k alpha . x)``."""

    k: float
    alpha: tuple[float, float, float] = (0.0, 0.0, 1.0)
    amplitude: complex = 1.0

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"wavenumber must be positive, got {self.k}")
        alpha = tuple(float(v) for v in self.alpha)
        if len(alpha) != 3 or abs(math.sqrt(sum(v * v for v in alpha)) - 1.0) > 1e-12:
            raise ValueError(f"direction must be a unit 3-vector, got {alpha}")
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "alpha", alpha)

    def __call__(self, x: Any) -> np.ndarray:
        phase = as_points(x) @ np.asarray(self.alpha)
        return complex(self.amplitude) * np.exp(1j * self.k * phase)

    @property
    def wavelength(self) -> float:
        return 2.0 * math.pi / self.k

    def to_dict(self) -> dict:
        return {"k": self.k, "alpha": list(self.alpha), "amplitude": complex_to_json(self.amplitude)}

    @classmethod
    def from_dict(cls, data: dict) -> "IncidentWave":
        return cls(
            float(data["k"]),
            tuple(data.get("alpha", (0.0, 0.0, 1.0))),
            parse_complex(data.get("amplitude", 1.0)),
        )


def ball_volume(a: float) -> float:
    return FOUR_PI * a**3 / 3.0


@dataclass(frozen=True, eq=False)
class BallConfig:
    """Balls of common radius ``a`` with centers and constant coefficients."""

    a: float
    centers: np.ndarray
    coeffs: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"ball radius must be positive, got {self.a}")
        centers = np.array(self.centers, dtype=float).reshape(-1, 3)
        coeffs = np.array(self.coeffs, dtype=complex).ravel()
        if coeffs.size != centers.shape[0]:
            raise ValueError("need one coefficient per center")
        centers.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def M(self) -> int:
        return self.centers.shape[0]

    @property
    def ball_volume(self) -> float:
        return ball_volume(self.a)

    def min_separation(self) -> float:
        """Smallest pairwise center distance (inf for fewer than two balls)."""
        if self.M < 2:
            return math.inf
        dist, _ = cKDTree(self.centers).query(self.centers, k=2)
        return float(np.min(dist[:, 1]))

    def check(self, domain: Domain | None = None) -> None:
        """Raise :class:`RealizabilityError` if balls intersect, leave ``domain`` or have Im < 0."""
        sep = self.min_separation()
        if sep < 2.0 * self.a * (1.0 - 1e-12):
            raise RealizabilityError(f"balls intersect: min center distance {sep:.6g} < 2a = {2 * self.a:.6g}")
        if domain is not None and self.M:
            lo = self.centers - self.a
            hi = self.centers + self.a
            tol = 1e-12 * float(np.max(domain.lengths))
            if np.any(lo < np.asarray(domain.lo) - tol) or np.any(hi > np.asarray(domain.hi) + tol):
                raise RealizabilityError("some balls are not contained in the domain")
        if self.M and np.min(self.coeffs.imag) < -IMAG_TOL:
            raise RealizabilityError("ball coefficients must have Im >= 0")

    def contains(self, x: Any) -> np.ndarray:
        """Ball-membership indicator: True where a point lies in some ball."""
        pts = as_points(x)
        if self.M == 0:
            return np.zeros(pts.shape[:-1], dtype=bool)
        dist, _ = cKDTree(self.centers).query(pts.reshape(-1, 3), k=1)
        return (dist <= self.a).reshape(pts.shape[:-1])


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------
def free_space_kernel(x: Any, y: Any, k: float) -> np.ndarray:
    """Outgoing free-space kernel ``exp(ik r) / (4 pi r)``, ``r = |x - y|``.

    Raises
    ------
    KernelDomainError
        If any pair of points coincides.
    """
    r = np.linalg.norm(as_points(x) - as_points(y), axis=-1)
    if np.any(r == 0.0):
        raise KernelDomainError("free-space kernel is singular at coincident points")
    return np.exp(1j * k * r) / (FOUR_PI * r)


def ball_potential(x: Any, center: Any, a: float) -> np.ndarray:
    """Newtonian potential of the ball ``|y - center| <= a`` at ``x``.

    Exterior points see a point mass ``V_a / |x - center|``; interior
    points get ``2 pi (a^2 - |x - center|^2 / 3)``.  The two branches meet
    at ``4 pi a^2 / 3`` on the sphere.
    """
    if not a > 0:
        raise ValueError("ball radius must be positive")
    r = np.linalg.norm(as_points(x) - as_points(center), axis=-1)
    outside = r >= a
    safe = np.where(outside, r, 1.0)
    return np.where(outside, ball_volume(a) / safe, 2.0 * math.pi * (a * a - r * r / 3.0))


def ball_self_integral(a: float, k: float) -> complex:
    """Integral of ``g(0, y)`` over the ball ``|y| <= a``.

    Equal to ``int_0^a r exp(ikr) dr = (exp(ika)(1 - ika) - 1) / k^2`` and
    to ``a^2 / 2`` at ``k = 0``.  A power series is used for ``|ka| < 0.1``
    where the closed form cancels.
    """
    if not a > 0:
        raise ValueError("ball radius must be positive")
    ka = k * a
    if abs(ka) < 0.1:
        # sum_n (ika)^n / (n! (n + 2)) * a^2
        total = 0.0j
        term = 1.0 + 0.0j
        for n in range(30):
            total += term / (n + 2)
            term *= 1j * ka / (n + 1)
        return complex(a * a * total)
    return complex((np.exp(1j * ka) * (1.0 - 1j * ka) - 1.0) / k**2)


def equivalent_radius(cell_volume: float) -> float:
    """Radius of the ball whose volume equals ``cell_volume``."""
    return (3.0 * cell_volume / FOUR_PI) ** (1.0 / 3.0)


def ball_kernel_integral(x: Any, center: Any, a: float, k: float) -> np.ndarray:
    """``int_{|y-center|<=a} g(x, y) dy`` with the singular part done exactly.

    ``g = 1/(4 pi r) + (exp(ikr) - 1)/(4 pi r)``: the first term integrates
    to ``ball_potential / (4 pi)``; the bounded second term is sampled at
    the center.  Exact for ``k = 0``.
    """
    r = np.linalg.norm(as_points(x) - as_points(center), axis=-1)
    safe = np.where(r > 0, r, 1.0)
    smooth = np.where(r > 0, np.expm1(1j * k * safe) / (FOUR_PI * safe), 1j * k / FOUR_PI)
    return ball_potential(x, center, a) / FOUR_PI + ball_volume(a) * smooth


def cell_kernel_integral(x: Any, cell_center: Any, spacing: Any, k: float) -> np.ndarray:
    """Approximate ``int_cell g(x, y) dy`` for a box cell.

    Three regimes by the distance ``r`` from ``x`` to the cell center:

    * ``r`` beyond the bounding sphere: midpoint rule ``g(x, c) h^3``;
    * ``r == 0``: :func:`ball_self_integral` with the volume-equivalent radius;
    * otherwise the singular/smooth split of :func:`ball_kernel_integral`
      on the volume-equivalent ball.
    """
    h = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
    vol = float(np.prod(h))
    a_eq = equivalent_radius(vol)
    bound = 0.5 * float(np.linalg.norm(h))
    diff = as_points(x) - as_points(cell_center)
    r = np.linalg.norm(diff, axis=-1)
    far = r > bound
    out = np.empty(r.shape, dtype=complex)
    if np.any(far):
        rf = r[far]
        out[far] = vol * np.exp(1j * k * rf) / (FOUR_PI * rf)
    center_hit = r == 0.0
    if np.any(center_hit):
        out[center_hit] = ball_self_integral(a_eq, k) if k > 0 else a_eq**2 / 2.0
    near = ~far & ~center_hit
    if np.any(near):
        rn = r[near]
        out[near] = ball_potential(rn[:, None] * np.array([1.0, 0.0, 0.0]), np.zeros(3), a_eq) / FOUR_PI + (
            vol * np.expm1(1j * k * rn) / (FOUR_PI * rn)
        )
    return out

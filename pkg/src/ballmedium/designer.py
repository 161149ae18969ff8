"""Choose a ball density N and ball coefficient nu^2 realizing a target n^2.

The embedded balls change the refraction coefficient to ``n0^2 + N nu^2``,
so only the product ``N nu^2 = n^2 - n0^2`` is determined.  A
:class:`Strategy` picks one factorization.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import (
    IMAG_TOL,
    PACKING_BOUND,
    Constant,
    DensityProfile,
    Domain,
    Grid,
    PackingError,
    RealizabilityError,
    RefractionProfile,
    SelectNonzero,
    combine,
    parse_complex,
)

STRATEGIES = ("fixed-N", "fixed-nu2", "zero-N-where-equal")
_ALIASES = {"fixed-ν²": "fixed-nu2", "fixed-nu^2": "fixed-nu2"}
_SPEC = re.compile(r"^\s*([\w\-ν²^]+)\s*\(\s*([^)]*)\s*\)\s*$")
#: Sample grid used when no grid is supplied.
DEFAULT_SAMPLES = 16


class DesignError(ValueError):
    """The requested strategy is not applicable to the inputs."""


@dataclass(frozen=True)
class Strategy:
    kind: str
    value: complex

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "value", parse_complex(self.value))

    @classmethod
    def parse(cls, spec: Any) -> "Strategy":
        """Accept ``"fixed-N(0.5)"`` or ``{"kind": "fixed-N", "value": 0.5}``."""
        if isinstance(spec, Strategy):
            return spec
        if isinstance(spec, dict):
            return cls(spec["kind"], spec["value"])
        m = _SPEC.match(str(spec))
        if not m:
            raise ValueError(f"cannot parse strategy {spec!r}")
        return cls(m.group(1), parse_complex(m.group(2)))

    def __str__(self) -> str:
        v = self.value.real if self.value.imag == 0 else self.value
        return f"{self.kind}({v:g})"


@dataclass(frozen=True)
class Diagnostic:
    region: str
    check: str
    passed: bool
    value: float

    def to_dict(self) -> dict:
        return {"region": self.region, "check": self.check, "passed": bool(self.passed), "value": self.value}


@dataclass(frozen=True, eq=False)
class DesignResult:
    density: DensityProfile
    nu_squared: RefractionProfile
    strategy: Strategy
    diagnostics: tuple[Diagnostic, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(d.passed for d in self.diagnostics)

    def to_dict(self) -> dict:
        return {
            "strategy": {"kind": self.strategy.kind, "value": _json_value(self.strategy.value)},
            "density": self.density.to_dict(),
            "nu_squared": self.nu_squared.to_dict(),
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DesignResult":
        return cls(
            DensityProfile.from_dict(data["density"], validate=False),
            RefractionProfile.from_dict(data["nu_squared"], validate=False),
            Strategy.parse(data["strategy"]),
            tuple(Diagnostic(**d) for d in data.get("diagnostics", ())),
        )


def _json_value(v: complex):
    return v.real if v.imag == 0 else {"re": v.real, "im": v.imag}


def _where(points: np.ndarray, index: int) -> str:
    return "x=(" + ", ".join(f"{c:.4g}" for c in points[index]) + ")"


def realizability_check(result: DesignResult, domain: Domain, grid: Grid | None = None) -> list[Diagnostic]:
    """Pointwise and integral constraints on a design, evaluated on ``grid``.

    ``nonnegative-density`` and ``nonnegative-im-nu2`` are the physical
    constraints; ``volume-fraction`` checks the mean of N against 1;
    ``packing`` is the stricter local simple-cubic bound N <= pi/6 that
    placement needs.
    """
    grid = grid or Grid(domain, (DEFAULT_SAMPLES,) * 3)
    pts = grid.centers
    n_raw = result.density.expr(pts)
    nu2 = result.nu_squared.expr(pts)
    out = []

    bad_imag_n = float(np.max(np.abs(n_raw.imag))) if n_raw.size else 0.0
    real_ok = bool(np.all(np.isfinite(n_raw))) and bad_imag_n <= IMAG_TOL * max(1.0, float(np.max(np.abs(n_raw))))
    out.append(Diagnostic("D", "real-density", real_ok, bad_imag_n))

    n_vals = n_raw.real
    i_min = int(np.nanargmin(n_vals))
    out.append(Diagnostic(_where(pts, i_min), "nonnegative-density", bool(n_vals[i_min] >= 0), float(n_vals[i_min])))

    i_max = int(np.nanargmax(n_vals))
    out.append(Diagnostic(_where(pts, i_max), "packing", bool(n_vals[i_max] <= PACKING_BOUND * (1 + 1e-12)), float(n_vals[i_max])))

    fraction = float(np.sum(n_vals) * grid.cell_volume / domain.volume)
    out.append(Diagnostic("D", "volume-fraction", fraction <= 1.0, fraction))

    finite = np.isfinite(nu2)
    i_im = int(np.argmin(np.where(finite, nu2.imag, -np.inf)))
    worst_im = float(nu2.imag[i_im]) if finite[i_im] else -math.inf
    out.append(Diagnostic(_where(pts, i_im), "nonnegative-im-nu2", worst_im >= -IMAG_TOL, worst_im))
    return out


def design(
    n_squared: RefractionProfile,
    n0_squared: RefractionProfile,
    strategy: Strategy | str | dict,
    grid: Grid | None = None,
    strict: bool = True,
) -> DesignResult:
    """Factor ``n^2 - n0^2 = N nu^2`` according to ``strategy``.

    ``fixed-N(c)`` uses constant ``N = c`` and ``nu^2 = (n^2 - n0^2)/c``;
    ``fixed-nu2(v)`` uses ``N = (n^2 - n0^2)/v``; ``zero-N-where-equal(c)``
    sets ``N = 0`` wherever the target equals the background and ``c``
    elsewhere.  With ``strict=True`` failed realizability checks raise;
    otherwise they are only recorded in the result.

    Raises
    ------
    DesignError
        On a zero or out-of-range strategy value.
    RealizabilityError
        If ``Im nu^2 < 0`` or N is negative or complex somewhere.
    PackingError
        If N exceeds pi/6 somewhere.
    """
    strategy = Strategy.parse(strategy)
    if n_squared.domain != n0_squared.domain:
        raise DesignError("target and background profiles must share a domain")
    domain = n_squared.domain
    contrast = combine("sub", n_squared.expr, n0_squared.expr)
    value = strategy.value
    if value == 0:
        raise DesignError(f"{strategy.kind} needs a nonzero value")
    if strategy.kind in ("fixed-N", "zero-N-where-equal"):
        if value.imag != 0 or value.real < 0:
            raise DesignError("fixed density must be a positive real number")
        if strict and value.real > PACKING_BOUND:
            raise PackingError(f"fixed density {value.real:g} exceeds the packing bound pi/6")
        c = Constant(value.real)
        nu2 = combine("div", contrast, c)
        density = c if strategy.kind == "fixed-N" else SelectNonzero(contrast, c)
    else:
        density = combine("div", contrast, Constant(value))
        nu2 = Constant(value)

    result = DesignResult(
        DensityProfile(density, domain, validate=False),
        RefractionProfile(nu2, domain, validate=False),
        strategy,
    )
    diagnostics = tuple(realizability_check(result, domain, grid))
    result = DesignResult(result.density, result.nu_squared, strategy, diagnostics)
    if strict:
        for d in diagnostics:
            if d.passed:
                continue
            if d.check == "packing":
                raise PackingError(f"density {d.value:.4g} exceeds the packing bound pi/6 at {d.region}")
            if d.check == "nonnegative-im-nu2":
                raise RealizabilityError(f"design needs Im nu^2 = {d.value:.3g} < 0 at {d.region}; balls require Im nu^2 >= 0")
            raise RealizabilityError(f"design fails {d.check} ({d.value:.4g}) at {d.region}")
    return result


def verify_design(result: DesignResult, n0_squared: RefractionProfile, n_squared: RefractionProfile, grid: Grid) -> float:
    """Largest ``|n0^2 + N nu^2 - n^2|`` over cell centers."""
    pts = grid.centers
    realized = n0_squared(pts) + result.density(pts) * result.nu_squared(pts)
    return float(np.max(np.abs(realized - n_squared(pts))))

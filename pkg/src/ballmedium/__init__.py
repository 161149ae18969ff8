"""Design and numerical verification of media built by embedding many small balls.

A background medium with refraction coefficient ``n0^2`` on a box ``D``
is loaded with non-intersecting balls of radius ``a`` whose centers have
density ``N(x) / V_a`` and whose coefficients are ``nu^2(x_m)``.  As
``a -> 0`` the many-ball field tends to the field of the medium with
coefficient ``n0^2 + N nu^2``.
"""

from .core import (
    PACKING_BOUND,
    Ball,
    BallConfig,
    Box,
    Bump,
    Constant,
    DensityProfile,
    Domain,
    Everywhere,
    Grid,
    GridField,
    HalfSpace,
    IncidentWave,
    KernelDomainError,
    PackingError,
    Piecewise,
    RealizabilityError,
    RefractionProfile,
    SolverError,
    ball_potential,
    ball_self_integral,
    cell_kernel_integral,
    free_space_kernel,
)
from .designer import DesignResult, Strategy, design, realizability_check, verify_design
from .particles import (
    FoldySystem,
    assemble_foldy,
    count_in_region,
    evaluate_discrete_field,
    packing_capacity,
    place_balls,
    riemann_sum,
    solve_discrete,
    total_volume_fraction,
)
from .solvers import (
    BackgroundMedium,
    FreeSpaceMedium,
    derive_contrast,
    greens_function,
    helmholtz_residual,
    solve_background,
    solve_effective,
    weighted_sup_norm,
)

__version__ = "0.1.0"

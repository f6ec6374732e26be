"""Numerical toolkit for geometric rough paths on R^d.

Truncated signatures, exact grid p-variation, Young and rough integration,
RDE solving by Picard iteration, small-parameter expansions of the solution
map with remainder-order verification, and the deterministic ingredients of
Laplace-method asymptotics.
"""

from .tensor import TruncatedTensor, tensor_mul, dilate, group_inverse, l1_level_norms
from .paths import (
    GridPath,
    GridRoughPath,
    ControlValue,
    pvar_norm,
    xi_gauge,
    project_piecewise_linear,
    canonical_control,
    control_eval,
)
from .lift import (
    lift_piecewise_linear,
    pushforward,
    concat,
    associate,
    gamma_scale,
    shift,
    joint_lift,
    rough_distance,
)

__version__ = "0.1.0"
